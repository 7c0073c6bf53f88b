//! Input modalities for one sample: digit-space text, rendered images, or both.

use std::fmt;
use std::str::FromStr;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{RenderStyle, TimeSeriesDataset};
use crate::plot::{self, Canvas, Frame, BLACK};

/// Version of the digit serializer, folded into cache keys.
pub const SERIALIZER_VERSION: &str = "tsprobe-digits/1";

#[derive(Debug, Error, PartialEq)]
pub enum RepresentError {
    #[error("cannot serialize value {value} at position {index}: {reason}")]
    SerializeValue {
        index: usize,
        value: f64,
        reason: String,
    },
    #[error("render error: {0}")]
    Render(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Modality {
    #[serde(rename = "d")]
    Digits,
    #[serde(rename = "v")]
    Visual,
    #[serde(rename = "d+v", alias = "d_plus_v")]
    DigitsAndVisual,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Digits, Modality::Visual, Modality::DigitsAndVisual];

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Digits => "d",
            Modality::Visual => "v",
            Modality::DigitsAndVisual => "d+v",
        }
    }

    pub fn has_text(self) -> bool {
        matches!(self, Modality::Digits | Modality::DigitsAndVisual)
    }

    pub fn has_images(self) -> bool {
        matches!(self, Modality::Visual | Modality::DigitsAndVisual)
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Modality {
    type Err = RepresentError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "d" => Ok(Modality::Digits),
            "v" => Ok(Modality::Visual),
            "d+v" | "d_plus_v" | "dv" => Ok(Modality::DigitsAndVisual),
            other => Err(RepresentError::Config(format!("unknown modality {other:?}"))),
        }
    }
}

/// Affine map `x ↦ scale·x + offset` applied before formatting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub scale: f64,
    pub offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SerializationConfig {
    /// Decimal places kept before the point is dropped.
    pub precision: usize,
    pub digit_separator: String,
    pub timestep_separator: String,
    pub sign_token: String,
    pub prescale: Option<Affine>,
    /// Keep every `stride`-th timestep.
    pub stride: usize,
}

impl Default for SerializationConfig {
    fn default() -> Self {
        SerializationConfig {
            precision: 2,
            digit_separator: " ".into(),
            timestep_separator: " , ".into(),
            sign_token: "-".into(),
            prescale: None,
            stride: 1,
        }
    }
}

impl SerializationConfig {
    pub fn validate(&self) -> Result<(), RepresentError> {
        if self.digit_separator.is_empty() || self.timestep_separator.is_empty() {
            return Err(RepresentError::Config("separators must be non-empty".into()));
        }
        if self.stride == 0 {
            return Err(RepresentError::Config("stride must be positive".into()));
        }
        if let Some(a) = self.prescale {
            if a.scale == 0.0 || !a.scale.is_finite() || !a.offset.is_finite() {
                return Err(RepresentError::Config("prescale must be invertible".into()));
            }
        }
        Ok(())
    }
}

const MAGNITUDE_LIMIT: f64 = 1e12;

fn format_value(
    index: usize,
    raw: f64,
    cfg: &SerializationConfig,
    out: &mut String,
) -> Result<(), RepresentError> {
    let value = match cfg.prescale {
        Some(a) => a.scale * raw + a.offset,
        None => raw,
    };
    if !value.is_finite() {
        return Err(RepresentError::SerializeValue {
            index,
            value: raw,
            reason: "non-finite".into(),
        });
    }
    if value.abs() >= MAGNITUDE_LIMIT {
        return Err(RepresentError::SerializeValue {
            index,
            value: raw,
            reason: format!("magnitude ≥ {MAGNITUDE_LIMIT:e}"),
        });
    }
    let fixed = format!("{:.*}", cfg.precision, value.abs());
    let digits: Vec<char> = fixed.chars().filter(|c| c.is_ascii_digit()).collect();
    if value < 0.0 && digits.iter().any(|&d| d != '0') {
        out.push_str(&cfg.sign_token);
        out.push_str(&cfg.digit_separator);
    }
    for (i, d) in digits.iter().enumerate() {
        if i > 0 {
            out.push_str(&cfg.digit_separator);
        }
        out.push(*d);
    }
    Ok(())
}

/// Digit-space text for one univariate series: each value at fixed
/// precision with the decimal point removed, digits separated, timesteps
/// joined.
pub fn serialize_series(series: &[f64], cfg: &SerializationConfig) -> Result<String, RepresentError> {
    cfg.validate()?;
    let mut out = String::new();
    for (k, (i, &v)) in series.iter().enumerate().step_by(cfg.stride).enumerate() {
        if k > 0 {
            out.push_str(&cfg.timestep_separator);
        }
        format_value(i, v, cfg, &mut out)?;
    }
    Ok(out)
}

/// Univariate samples serialize to a bare digit string; multivariate samples
/// emit one `<channel>: <digits>` line per channel.
pub fn serialize_digits(
    channels: &[Vec<f64>],
    channel_names: &[String],
    cfg: &SerializationConfig,
) -> Result<String, RepresentError> {
    if channels.len() == 1 {
        return serialize_series(&channels[0], cfg);
    }
    let mut lines = Vec::with_capacity(channels.len());
    for (v, ch) in channels.iter().enumerate() {
        let name = channel_names
            .get(v)
            .cloned()
            .unwrap_or_else(|| format!("channel_{v}"));
        lines.push(format!("{name}: {}", serialize_series(ch, cfg)?));
    }
    Ok(lines.join("\n"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MagnitudeScale {
    Linear,
    Log,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderConfig {
    pub width: u32,
    pub height: u32,
    pub style: RenderStyle,
    /// Maximum lines per panel before the plot is split into stacked panels.
    pub subplot_threshold: usize,
    pub legend: bool,
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub window: usize,
    pub overlap: f64,
    pub magnitude: MagnitudeScale,
    pub sample_rate: Option<f64>,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            width: 640,
            height: 480,
            style: RenderStyle::Line,
            subplot_threshold: 3,
            legend: true,
            title: "Time series".into(),
            x_label: "Time step".into(),
            y_label: "Value".into(),
            window: 256,
            overlap: 0.5,
            magnitude: MagnitudeScale::Log,
            sample_rate: None,
        }
    }
}

impl RenderConfig {
    fn validate(&self) -> Result<(), RepresentError> {
        if self.width < 160 || self.height < 120 {
            return Err(RepresentError::Config("image must be at least 160×120".into()));
        }
        if self.subplot_threshold == 0 {
            return Err(RepresentError::Config(
                "subplot_threshold must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.overlap) {
            return Err(RepresentError::Config("overlap must lie in [0, 1)".into()));
        }
        if self.window == 0 {
            return Err(RepresentError::Config("window must be positive".into()));
        }
        Ok(())
    }
}

/// Channel index ranges, one per stacked panel.
pub fn panel_layout(num_channels: usize, threshold: usize) -> Vec<std::ops::Range<usize>> {
    if num_channels <= threshold {
        return std::iter::once(0..num_channels).collect();
    }
    (0..num_channels.div_ceil(threshold))
        .map(|p| p * threshold..((p + 1) * threshold).min(num_channels))
        .collect()
}

const MARGIN_LEFT: i64 = 70;
const MARGIN_RIGHT: i64 = 16;
const MARGIN_TOP: i64 = 36;
const MARGIN_BOTTOM: i64 = 40;
const PANEL_GAP: i64 = 14;

/// Line plot of a `[V × T]` sample with title, axis labels and (for V > 1)
/// a legend per panel.
pub fn render_line_plot(
    channels: &[Vec<f64>],
    cfg: &RenderConfig,
    channel_names: &[String],
) -> Result<Vec<u8>, RepresentError> {
    cfg.validate()?;
    if channels.is_empty() || channels.iter().any(Vec::is_empty) {
        return Err(RepresentError::Render("empty series".into()));
    }
    if channels.iter().flatten().any(|v| !v.is_finite()) {
        return Err(RepresentError::Render("non-finite value".into()));
    }
    let panels = panel_layout(channels.len(), cfg.subplot_threshold);
    let mut canvas = Canvas::new(cfg.width, cfg.height);
    let w = cfg.width as i64;
    let h = cfg.height as i64;
    canvas.text_centered(w / 2, 12, &cfg.title, 2, BLACK);
    let plot_top = MARGIN_TOP;
    let plot_bottom = h - MARGIN_BOTTOM;
    let n_panels = panels.len() as i64;
    let panel_h = (plot_bottom - plot_top - PANEL_GAP * (n_panels - 1)) / n_panels;
    let t_max = channels.iter().map(Vec::len).max().unwrap_or(1);

    for (p, range) in panels.iter().enumerate() {
        let top = plot_top + p as i64 * (panel_h + PANEL_GAP);
        let y_range = plot::padded_range(channels[range.clone()].iter().flatten().copied());
        let frame = Frame {
            left: MARGIN_LEFT,
            top,
            right: w - MARGIN_RIGHT,
            bottom: top + panel_h,
            x_range: (0.0, (t_max.max(2) - 1) as f64),
            y_range,
        };
        let last = p + 1 == panels.len();
        frame.draw_axes(&mut canvas, last);
        let mut legend = Vec::new();
        for v in range.clone() {
            let color = plot::palette(v);
            let xs: Vec<f64> = (0..channels[v].len()).map(|t| t as f64).collect();
            frame.polyline(&mut canvas, &xs, &channels[v], color);
            let name = channel_names
                .get(v)
                .cloned()
                .unwrap_or_else(|| format!("channel_{v}"));
            legend.push((name, color));
        }
        if cfg.legend && channels.len() > 1 {
            plot::draw_legend(&mut canvas, &frame, &legend);
        }
        let label_y = top + panel_h / 2 + plot::text_width(&cfg.y_label, 1) / 2;
        canvas.text_vertical(8, label_y, &cfg.y_label, 1, BLACK);
    }
    canvas.text_centered(
        (MARGIN_LEFT + w - MARGIN_RIGHT) / 2,
        h - 16,
        &cfg.x_label,
        1,
        BLACK,
    );
    Ok(canvas.into_png())
}

/// Number of STFT frames for a signal of `len` samples.
pub fn stft_frame_count(len: usize, window: usize, hop: usize) -> usize {
    if window == 0 || hop == 0 || window > len {
        0
    } else {
        (len - window) / hop + 1
    }
}

pub fn stft_hop(window: usize, overlap: f64) -> usize {
    ((window as f64 * (1.0 - overlap)).round() as usize).max(1)
}

/// Hann-windowed short-time Fourier magnitudes, `[frames][window/2 + 1]`.
pub fn stft_magnitudes(signal: &[f64], window: usize, overlap: f64) -> Result<Vec<Vec<f64>>, RepresentError> {
    if window == 0 || window > signal.len() {
        return Err(RepresentError::Render(format!(
            "window {window} exceeds series length {}",
            signal.len()
        )));
    }
    if !(0.0..1.0).contains(&overlap) {
        return Err(RepresentError::Config("overlap must lie in [0, 1)".into()));
    }
    let hop = stft_hop(window, overlap);
    let frames = stft_frame_count(signal.len(), window, hop);
    let hann: Vec<f64> = (0..window)
        .map(|i| {
            if window == 1 {
                1.0
            } else {
                0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / (window - 1) as f64).cos()
            }
        })
        .collect();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(window);
    let bins = window / 2 + 1;
    let mut out = Vec::with_capacity(frames);
    let mut buf = vec![Complex::new(0.0, 0.0); window];
    for f in 0..frames {
        let start = f * hop;
        for (i, b) in buf.iter_mut().enumerate() {
            *b = Complex::new(signal[start + i] * hann[i], 0.0);
        }
        fft.process(&mut buf);
        out.push(buf[..bins].iter().map(|c| c.norm()).collect());
    }
    Ok(out)
}

/// Spectrogram image: time on the horizontal axis, frequency upward.
pub fn render_spectrogram(signal: &[f64], cfg: &RenderConfig) -> Result<Vec<u8>, RepresentError> {
    cfg.validate()?;
    if signal.is_empty() {
        return Err(RepresentError::Render("empty series".into()));
    }
    if signal.iter().any(|v| !v.is_finite()) {
        return Err(RepresentError::Render("non-finite value".into()));
    }
    let mags = stft_magnitudes(signal, cfg.window, cfg.overlap)?;
    let scaled: Vec<Vec<f64>> = mags
        .iter()
        .map(|frame| {
            frame
                .iter()
                .map(|&m| match cfg.magnitude {
                    MagnitudeScale::Linear => m,
                    MagnitudeScale::Log => 20.0 * (m + 1e-12).log10(),
                })
                .collect()
        })
        .collect();
    let (lo, hi) = scaled
        .iter()
        .flatten()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    let span = hi - lo;

    let mut canvas = Canvas::new(cfg.width, cfg.height);
    let w = cfg.width as i64;
    let h = cfg.height as i64;
    canvas.text_centered(w / 2, 12, &cfg.title, 2, BLACK);
    let (x_range, x_label) = match cfg.sample_rate {
        Some(sr) if sr > 0.0 => ((0.0, signal.len() as f64 / sr), "Time (s)".to_string()),
        _ => ((0.0, signal.len() as f64), cfg.x_label.clone()),
    };
    let (y_range, y_label) = match cfg.sample_rate {
        Some(sr) if sr > 0.0 => ((0.0, sr / 2.0), "Frequency (Hz)".to_string()),
        _ => ((0.0, 0.5), "Frequency (cycles/sample)".to_string()),
    };
    let frame = Frame {
        left: MARGIN_LEFT,
        top: MARGIN_TOP,
        right: w - MARGIN_RIGHT,
        bottom: h - MARGIN_BOTTOM,
        x_range,
        y_range,
    };
    let n_frames = scaled.len() as i64;
    let n_bins = scaled[0].len() as i64;
    let pw = frame.right - frame.left;
    let ph = frame.bottom - frame.top;
    for px in 0..pw {
        let fi = ((px * n_frames) / pw).min(n_frames - 1) as usize;
        for py in 0..ph {
            let bi = (((ph - 1 - py) * n_bins) / ph).min(n_bins - 1) as usize;
            let t = if span > 0.0 {
                (scaled[fi][bi] - lo) / span
            } else {
                0.0
            };
            canvas.put(frame.left + px, frame.top + py, plot::colormap(t));
        }
    }
    frame.draw_axes(&mut canvas, true);
    canvas.text_centered((frame.left + frame.right) / 2, h - 16, &x_label, 1, BLACK);
    let label_y = (frame.top + frame.bottom) / 2 + plot::text_width(&y_label, 1) / 2;
    canvas.text_vertical(8, label_y, &y_label, 1, BLACK);
    Ok(canvas.into_png())
}

/// One sample rendered into a modality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Representation {
    pub modality: Modality,
    pub text: Option<String>,
    /// PNG blobs, base64 on the wire.
    #[serde(with = "b64_list")]
    pub images: Vec<Vec<u8>>,
}

impl Representation {
    pub fn check(&self) -> Result<(), RepresentError> {
        let ok = match self.modality {
            Modality::Digits => self.text.is_some() && self.images.is_empty(),
            Modality::Visual => self.text.is_none() && !self.images.is_empty(),
            Modality::DigitsAndVisual => self.text.is_some() && !self.images.is_empty(),
        };
        if ok {
            Ok(())
        } else {
            Err(RepresentError::Config(format!(
                "representation payload inconsistent with modality {}",
                self.modality
            )))
        }
    }
}

pub(crate) mod b64_list {
    use base64::engine::general_purpose::STANDARD;
    use base64::Engine;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[Vec<u8>], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(|b| STANDARD.encode(b)))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Vec<u8>>, D::Error> {
        let raw: Vec<String> = Deserialize::deserialize(d)?;
        raw.into_iter()
            .map(|s| STANDARD.decode(s).map_err(serde::de::Error::custom))
            .collect()
    }
}

/// Serializer and renderer settings used to build representations.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RepresentConfig {
    pub serialization: SerializationConfig,
    pub render: RenderConfig,
}

/// Images for a `[V × T]` sample according to `cfg.style`: one line plot,
/// or one spectrogram per channel.
pub fn render_images(
    channels: &[Vec<f64>],
    channel_names: &[String],
    cfg: &RenderConfig,
) -> Result<Vec<Vec<u8>>, RepresentError> {
    match cfg.style {
        RenderStyle::Line => Ok(vec![render_line_plot(channels, cfg, channel_names)?]),
        RenderStyle::Spectrogram => channels
            .iter()
            .enumerate()
            .map(|(v, ch)| {
                let mut c = cfg.clone();
                if channels.len() > 1 {
                    let name = channel_names.get(v).map(String::as_str).unwrap_or("channel");
                    c.title = format!("{} ({name})", cfg.title);
                }
                render_spectrogram(ch, &c)
            })
            .collect(),
    }
}

pub fn build_representation(
    channels: &[Vec<f64>],
    channel_names: &[String],
    modality: Modality,
    cfg: &RepresentConfig,
) -> Result<Representation, RepresentError> {
    let text = if modality.has_text() {
        Some(serialize_digits(channels, channel_names, &cfg.serialization)?)
    } else {
        None
    };
    let images = if modality.has_images() {
        render_images(channels, channel_names, &cfg.render)?
    } else {
        Vec::new()
    };
    let rep = Representation {
        modality,
        text,
        images,
    };
    rep.check()?;
    Ok(rep)
}

/// Representation of sample `i`; render style, sample rate and title come
/// from the dataset.
pub fn represent_sample(
    ds: &TimeSeriesDataset,
    i: usize,
    modality: Modality,
    cfg: &RepresentConfig,
) -> Result<Representation, RepresentError> {
    let mut cfg = cfg.clone();
    cfg.render.style = ds.render_style;
    if cfg.render.sample_rate.is_none() {
        cfg.render.sample_rate = ds.sample_rate;
    }
    if cfg.render.title == RenderConfig::default().title {
        cfg.render.title = ds.id.to_uppercase();
    }
    build_representation(&ds.sample_matrix(i), &ds.channel_names, modality, &cfg)
}
