//! Minimal deterministic raster plotting: axes, polylines, heatmaps, text.
//!
//! Glyphs come from an embedded 8×8 bitmap font so output bytes do not
//! depend on system fonts. PNG bytes are stable for a fixed input and
//! [`RENDERER_VERSION`].

use image::codecs::png::{CompressionType, FilterType, PngEncoder};
use image::{ImageEncoder, Rgb, RgbImage};

pub const RENDERER_VERSION: &str = "tsprobe-render/1";

pub const WHITE: Rgb<u8> = Rgb([255, 255, 255]);
pub const BLACK: Rgb<u8> = Rgb([0, 0, 0]);
pub const GRID: Rgb<u8> = Rgb([225, 225, 225]);

/// Categorical palette (matplotlib tab10).
pub const PALETTE: [Rgb<u8>; 10] = [
    Rgb([31, 119, 180]),
    Rgb([255, 127, 14]),
    Rgb([44, 160, 44]),
    Rgb([214, 39, 40]),
    Rgb([148, 103, 189]),
    Rgb([140, 86, 75]),
    Rgb([227, 119, 194]),
    Rgb([127, 127, 127]),
    Rgb([188, 189, 34]),
    Rgb([23, 190, 207]),
];

pub fn palette(i: usize) -> Rgb<u8> {
    PALETTE[i % PALETTE.len()]
}

/// Viridis-like ramp for `t ∈ [0, 1]`.
pub fn colormap(t: f64) -> Rgb<u8> {
    const STOPS: [[f64; 3]; 5] = [
        [68.0, 1.0, 84.0],
        [59.0, 82.0, 139.0],
        [33.0, 145.0, 140.0],
        [94.0, 201.0, 98.0],
        [253.0, 231.0, 37.0],
    ];
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let pos = t * (STOPS.len() - 1) as f64;
    let i = (pos.floor() as usize).min(STOPS.len() - 2);
    let f = pos - i as f64;
    let mut out = [0u8; 3];
    for (k, o) in out.iter_mut().enumerate() {
        *o = (STOPS[i][k] + f * (STOPS[i + 1][k] - STOPS[i][k])).round() as u8;
    }
    Rgb(out)
}

pub struct Canvas {
    img: RgbImage,
}

impl Canvas {
    pub fn new(width: u32, height: u32) -> Self {
        Canvas {
            img: RgbImage::from_pixel(width, height, WHITE),
        }
    }

    pub fn width(&self) -> u32 {
        self.img.width()
    }

    pub fn height(&self) -> u32 {
        self.img.height()
    }

    pub fn image(&self) -> &RgbImage {
        &self.img
    }

    pub fn put(&mut self, x: i64, y: i64, c: Rgb<u8>) {
        if x >= 0 && y >= 0 && (x as u32) < self.img.width() && (y as u32) < self.img.height() {
            self.img.put_pixel(x as u32, y as u32, c);
        }
    }

    pub fn fill_rect(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, c: Rgb<u8>) {
        for y in y0.min(y1)..=y0.max(y1) {
            for x in x0.min(x1)..=x0.max(x1) {
                self.put(x, y, c);
            }
        }
    }

    pub fn stroke_rect(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, c: Rgb<u8>) {
        self.line(x0, y0, x1, y0, c);
        self.line(x1, y0, x1, y1, c);
        self.line(x1, y1, x0, y1, c);
        self.line(x0, y1, x0, y0, c);
    }

    /// Bresenham segment.
    pub fn line(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, c: Rgb<u8>) {
        let (mut x, mut y) = (x0, y0);
        let dx = (x1 - x0).abs();
        let dy = -(y1 - y0).abs();
        let sx = if x0 < x1 { 1 } else { -1 };
        let sy = if y0 < y1 { 1 } else { -1 };
        let mut err = dx + dy;
        loop {
            self.put(x, y, c);
            if x == x1 && y == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x += sx;
            }
            if e2 <= dx {
                err += dx;
                y += sy;
            }
        }
    }

    pub fn dot(&mut self, x: i64, y: i64, r: i64, c: Rgb<u8>) {
        for dy in -r..=r {
            for dx in -r..=r {
                if dx * dx + dy * dy <= r * r {
                    self.put(x + dx, y + dy, c);
                }
            }
        }
    }

    /// Horizontal text with its top-left corner at `(x, y)`.
    pub fn text(&mut self, x: i64, y: i64, s: &str, scale: i64, c: Rgb<u8>) {
        for (i, ch) in s.chars().enumerate() {
            let glyph = glyph(ch);
            let gx = x + i as i64 * 8 * scale;
            for (row, bits) in glyph.iter().enumerate() {
                for col in 0..8 {
                    if bits & (1 << col) != 0 {
                        self.fill_rect(
                            gx + col * scale,
                            y + row as i64 * scale,
                            gx + col * scale + scale - 1,
                            y + row as i64 * scale + scale - 1,
                            c,
                        );
                    }
                }
            }
        }
    }

    /// Text rotated 90° counter-clockwise, reading bottom-to-top, with the
    /// baseline start at `(x, y)`.
    pub fn text_vertical(&mut self, x: i64, y: i64, s: &str, scale: i64, c: Rgb<u8>) {
        for (i, ch) in s.chars().enumerate() {
            let glyph = glyph(ch);
            let gy = y - i as i64 * 8 * scale;
            for (row, bits) in glyph.iter().enumerate() {
                for col in 0..8i64 {
                    if bits & (1 << col) != 0 {
                        let px = x + row as i64 * scale;
                        let py = gy - col * scale;
                        self.fill_rect(px, py - scale + 1, px + scale - 1, py, c);
                    }
                }
            }
        }
    }

    pub fn text_centered(&mut self, cx: i64, y: i64, s: &str, scale: i64, c: Rgb<u8>) {
        let w = text_width(s, scale);
        self.text(cx - w / 2, y, s, scale, c);
    }

    pub fn into_png(self) -> Vec<u8> {
        encode_png(&self.img)
    }
}

pub fn text_width(s: &str, scale: i64) -> i64 {
    s.chars().count() as i64 * 8 * scale
}

fn glyph(ch: char) -> [u8; 8] {
    use font8x8::UnicodeFonts;
    font8x8::BASIC_FONTS
        .get(ch)
        .or_else(|| font8x8::LATIN_FONTS.get(ch))
        .unwrap_or(font8x8::BASIC_FONTS.get('?').unwrap_or([0; 8]))
}

pub fn encode_png(img: &RgbImage) -> Vec<u8> {
    let mut out = Vec::new();
    PngEncoder::new_with_quality(&mut out, CompressionType::Default, FilterType::Adaptive)
        .write_image(
            img.as_raw(),
            img.width(),
            img.height(),
            image::ExtendedColorType::Rgb8,
        )
        .expect("in-memory PNG encoding cannot fail");
    out
}

/// "Nice" tick positions covering `[lo, hi]`.
pub fn nice_ticks(lo: f64, hi: f64, target: usize) -> Vec<f64> {
    if !(lo.is_finite() && hi.is_finite()) || hi <= lo {
        return vec![lo];
    }
    let raw = (hi - lo) / target.max(1) as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 2.5, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let start = (lo / step).ceil() * step;
    let mut ticks = Vec::new();
    let mut k = 0;
    loop {
        let v = start + k as f64 * step;
        if v > hi + step * 1e-9 {
            break;
        }
        ticks.push(if v.abs() < step * 1e-9 { 0.0 } else { v });
        k += 1;
    }
    ticks
}

pub fn format_tick(v: f64) -> String {
    let a = v.abs();
    if a == 0.0 {
        "0".into()
    } else if !(1e-3..1e5).contains(&a) {
        format!("{v:.1e}")
    } else if (v - v.round()).abs() < 1e-9 {
        format!("{}", v.round() as i64)
    } else if a >= 1.0 {
        format!("{v:.1}")
    } else {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').to_string()
    }
}

/// Data-to-pixel mapping for one rectangular plot region.
#[derive(Debug, Clone, Copy)]
pub struct Frame {
    pub left: i64,
    pub top: i64,
    pub right: i64,
    pub bottom: i64,
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
}

impl Frame {
    pub fn px(&self, x: f64) -> i64 {
        let (a, b) = self.x_range;
        let t = if b > a { (x - a) / (b - a) } else { 0.5 };
        self.left + (t * (self.right - self.left) as f64).round() as i64
    }

    pub fn py(&self, y: f64) -> i64 {
        let (a, b) = self.y_range;
        let t = if b > a { (y - a) / (b - a) } else { 0.5 };
        self.bottom - (t * (self.bottom - self.top) as f64).round() as i64
    }

    /// Border, light grid and tick labels.
    pub fn draw_axes(&self, canvas: &mut Canvas, x_ticks: bool) {
        for t in nice_ticks(self.y_range.0, self.y_range.1, 4) {
            let y = self.py(t);
            canvas.line(self.left, y, self.right, y, GRID);
            let label = format_tick(t);
            canvas.text(self.left - 4 - text_width(&label, 1), y - 4, &label, 1, BLACK);
        }
        if x_ticks {
            for t in nice_ticks(self.x_range.0, self.x_range.1, 6) {
                let x = self.px(t);
                canvas.line(x, self.bottom, x, self.bottom + 3, BLACK);
                canvas.text_centered(x, self.bottom + 6, &format_tick(t), 1, BLACK);
            }
        }
        canvas.stroke_rect(self.left, self.top, self.right, self.bottom, BLACK);
    }

    pub fn polyline(&self, canvas: &mut Canvas, xs: &[f64], ys: &[f64], c: Rgb<u8>) {
        let pts: Vec<(i64, i64)> = xs
            .iter()
            .zip(ys)
            .map(|(&x, &y)| (self.px(x), self.py(y)))
            .collect();
        if pts.len() == 1 {
            canvas.dot(pts[0].0, pts[0].1, 1, c);
        }
        for w in pts.windows(2) {
            canvas.line(w[0].0, w[0].1, w[1].0, w[1].1, c);
        }
    }
}

/// Range padded by 5% on each side; degenerate ranges widen to ±1.
pub fn padded_range(values: impl IntoIterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values {
        if v.is_finite() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if !lo.is_finite() {
        return (-1.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 1.0, hi + 1.0);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

/// Legend box anchored at the top-right corner inside `frame`.
pub fn draw_legend(canvas: &mut Canvas, frame: &Frame, entries: &[(String, Rgb<u8>)]) {
    if entries.is_empty() {
        return;
    }
    let w = entries.iter().map(|(s, _)| text_width(s, 1)).max().unwrap_or(0) + 28;
    let h = entries.len() as i64 * 12 + 6;
    let x0 = frame.right - w - 6;
    let y0 = frame.top + 6;
    canvas.fill_rect(x0, y0, x0 + w, y0 + h, WHITE);
    canvas.stroke_rect(x0, y0, x0 + w, y0 + h, BLACK);
    for (i, (label, color)) in entries.iter().enumerate() {
        let y = y0 + 4 + i as i64 * 12;
        canvas.fill_rect(x0 + 4, y + 3, x0 + 18, y + 4, *color);
        canvas.text(x0 + 22, y, label, 1, BLACK);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ticks_are_nice_and_cover() {
        let t = nice_ticks(0.0, 10.0, 5);
        assert_eq!(t, vec![0.0, 2.0, 4.0, 6.0, 8.0, 10.0]);
        let t = nice_ticks(-0.3, 0.7, 4);
        assert!(t.contains(&0.0));
        assert!(t.iter().all(|v| (-0.3..=0.7).contains(v)));
    }

    #[test]
    fn tick_formatting() {
        assert_eq!(format_tick(0.0), "0");
        assert_eq!(format_tick(200.0), "200");
        assert_eq!(format_tick(0.25), "0.25");
        assert_eq!(format_tick(2.5), "2.5");
    }

    #[test]
    fn png_is_deterministic() {
        let draw = || {
            let mut c = Canvas::new(40, 30);
            c.line(0, 0, 39, 29, BLACK);
            c.text(2, 2, "Ab", 1, palette(3));
            c.into_png()
        };
        let a = draw();
        assert_eq!(a, draw());
        assert_eq!(&a[1..4], b"PNG");
    }

    #[test]
    fn colormap_endpoints() {
        assert_eq!(colormap(0.0), Rgb([68, 1, 84]));
        assert_eq!(colormap(1.0), Rgb([253, 231, 37]));
        assert_eq!(colormap(f64::NAN), colormap(0.0));
    }
}
