//! Minimal deterministic chart rendering (line and bar charts) onto PNG
//! buffers, with a built-in 5x7 bitmap font for labels. No system fonts, no
//! timestamps: the same inputs always produce the same bytes.

use std::path::Path;

use anyhow::Result;
use image::{Rgb, RgbImage};

pub const WIDTH: u32 = 720;
pub const HEIGHT: u32 = 440;
const MARGIN_L: u32 = 64;
const MARGIN_R: u32 = 16;
const MARGIN_T: u32 = 36;
const MARGIN_B: u32 = 44;

pub const PALETTE: [[u8; 3]; 8] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [127, 127, 127],
    [23, 190, 207],
];

/// 5x7 glyphs, one byte per row, bit 4 = leftmost column.
fn glyph(c: char) -> [u8; 7] {
    match c.to_ascii_uppercase() {
        '0' => [0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E],
        '1' => [0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E],
        '2' => [0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F],
        '3' => [0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E],
        '4' => [0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02],
        '5' => [0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E],
        '6' => [0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E],
        '7' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08],
        '8' => [0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E],
        '9' => [0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C],
        'A' => [0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11],
        'B' => [0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E],
        'C' => [0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E],
        'D' => [0x1C, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1C],
        'E' => [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F],
        'F' => [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10],
        'G' => [0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F],
        'H' => [0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11],
        'I' => [0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E],
        'J' => [0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C],
        'K' => [0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11],
        'L' => [0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F],
        'M' => [0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11],
        'N' => [0x11, 0x19, 0x15, 0x13, 0x11, 0x11, 0x11],
        'O' => [0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
        'P' => [0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10],
        'Q' => [0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D],
        'R' => [0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11],
        'S' => [0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E],
        'T' => [0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04],
        'U' => [0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
        'V' => [0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04],
        'W' => [0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A],
        'X' => [0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11],
        'Y' => [0x11, 0x11, 0x0A, 0x04, 0x04, 0x04, 0x04],
        'Z' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F],
        '.' => [0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C],
        ',' => [0x00, 0x00, 0x00, 0x00, 0x0C, 0x04, 0x08],
        '-' => [0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00],
        '+' => [0x00, 0x04, 0x04, 0x1F, 0x04, 0x04, 0x00],
        '_' => [0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x1F],
        '=' => [0x00, 0x00, 0x1F, 0x00, 0x1F, 0x00, 0x00],
        ':' => [0x00, 0x0C, 0x0C, 0x00, 0x0C, 0x0C, 0x00],
        '/' => [0x01, 0x01, 0x02, 0x04, 0x08, 0x10, 0x10],
        '(' => [0x02, 0x04, 0x08, 0x08, 0x08, 0x04, 0x02],
        ')' => [0x08, 0x04, 0x02, 0x02, 0x02, 0x04, 0x08],
        '%' => [0x18, 0x19, 0x02, 0x04, 0x08, 0x13, 0x03],
        _ => [0x00; 7],
    }
}

pub struct Canvas {
    img: RgbImage,
}

impl Canvas {
    pub fn new() -> Self {
        let mut img = RgbImage::new(WIDTH, HEIGHT);
        for p in img.pixels_mut() {
            *p = Rgb([255, 255, 255]);
        }
        Canvas { img }
    }

    fn put(&mut self, x: i64, y: i64, color: [u8; 3]) {
        if x >= 0 && y >= 0 && (x as u32) < WIDTH && (y as u32) < HEIGHT {
            self.img.put_pixel(x as u32, y as u32, Rgb(color));
        }
    }

    pub fn text(&mut self, x: i64, y: i64, s: &str, color: [u8; 3]) {
        let mut cx = x;
        for c in s.chars() {
            let g = glyph(c);
            for (row, bits) in g.iter().enumerate() {
                for col in 0..5 {
                    if bits & (0x10 >> col) != 0 {
                        self.put(cx + col as i64, y + row as i64, color);
                    }
                }
            }
            cx += 6;
        }
    }

    pub fn text_width(s: &str) -> i64 {
        s.chars().count() as i64 * 6
    }

    pub fn line(&mut self, x0: f64, y0: f64, x1: f64, y1: f64, color: [u8; 3]) {
        let steps = (x1 - x0).abs().max((y1 - y0).abs()).ceil().max(1.0) as usize;
        for i in 0..=steps {
            let t = i as f64 / steps as f64;
            self.put(
                (x0 + (x1 - x0) * t).round() as i64,
                (y0 + (y1 - y0) * t).round() as i64,
                color,
            );
        }
    }

    pub fn fill_rect(&mut self, x0: i64, y0: i64, w: i64, h: i64, color: [u8; 3]) {
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                self.put(x, y, color);
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        self.img.save(path)?;
        Ok(())
    }
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    if v.abs() >= 100.0 && v.fract() == 0.0 {
        format!("{v:.0}")
    } else if v.abs() >= 1.0 {
        let s = format!("{v:.2}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        format!("{v:.3}")
    }
}

struct Frame {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        MARGIN_L as f64
            + (x - self.x_min) / (self.x_max - self.x_min).max(1e-12)
                * (WIDTH - MARGIN_L - MARGIN_R) as f64
    }

    fn py(&self, y: f64) -> f64 {
        (HEIGHT - MARGIN_B) as f64
            - (y - self.y_min) / (self.y_max - self.y_min).max(1e-12)
                * (HEIGHT - MARGIN_T - MARGIN_B) as f64
    }
}

fn draw_frame(canvas: &mut Canvas, frame: &Frame, title: &str, x_label: &str, y_label: &str) {
    let black = [0, 0, 0];
    let grey = [210, 210, 210];
    let x0 = MARGIN_L as f64;
    let x1 = (WIDTH - MARGIN_R) as f64;
    let y0 = MARGIN_T as f64;
    let y1 = (HEIGHT - MARGIN_B) as f64;

    for i in 0..=4 {
        let ty = frame.y_min + (frame.y_max - frame.y_min) * i as f64 / 4.0;
        let py = frame.py(ty);
        canvas.line(x0, py, x1, py, grey);
        let label = fmt_tick(ty);
        canvas.text(x0 as i64 - Canvas::text_width(&label) - 6, py as i64 - 3, &label, black);
    }
    for i in 0..=4 {
        let tx = frame.x_min + (frame.x_max - frame.x_min) * i as f64 / 4.0;
        let px = frame.px(tx);
        canvas.line(px, y0, px, y1, grey);
        let label = fmt_tick(tx);
        canvas.text(px as i64 - Canvas::text_width(&label) / 2, y1 as i64 + 8, &label, black);
    }
    canvas.line(x0, y1, x1, y1, black);
    canvas.line(x0, y0, x0, y1, black);
    canvas.text((WIDTH as i64 - Canvas::text_width(title)) / 2, 12, title, black);
    canvas.text(
        (WIDTH as i64 - Canvas::text_width(x_label)) / 2,
        HEIGHT as i64 - 14,
        x_label,
        black,
    );
    canvas.text(4, MARGIN_T as i64 - 16, y_label, black);
}

/// Multi-series line chart; series are `(name, points)`.
pub fn line_chart(
    path: &Path,
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[(String, Vec<(f64, f64)>)],
) -> Result<()> {
    let mut canvas = Canvas::new();
    let all: Vec<(f64, f64)> = series.iter().flat_map(|(_, pts)| pts.iter().copied()).collect();
    let (mut x_min, mut x_max) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y_min, mut y_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in &all {
        x_min = x_min.min(x);
        x_max = x_max.max(x);
        y_min = y_min.min(y);
        y_max = y_max.max(y);
    }
    if all.is_empty() {
        x_min = 0.0;
        x_max = 1.0;
        y_min = 0.0;
        y_max = 1.0;
    }
    if (y_max - y_min).abs() < 1e-12 {
        y_max = y_min + 1.0;
    }
    if (x_max - x_min).abs() < 1e-12 {
        x_max = x_min + 1.0;
    }
    y_min = y_min.min(0.0);
    let frame = Frame { x_min, x_max, y_min, y_max };
    draw_frame(&mut canvas, &frame, title, x_label, y_label);

    for (si, (name, pts)) in series.iter().enumerate() {
        let color = PALETTE[si % PALETTE.len()];
        for w in pts.windows(2) {
            canvas.line(
                frame.px(w[0].0),
                frame.py(w[0].1),
                frame.px(w[1].0),
                frame.py(w[1].1),
                color,
            );
        }
        // legend
        let ly = MARGIN_T as i64 + 6 + si as i64 * 12;
        let lx = (WIDTH - MARGIN_R) as i64 - 150;
        canvas.fill_rect(lx, ly, 8, 8, color);
        canvas.text(lx + 12, ly, name, [0, 0, 0]);
    }
    canvas.save(path)
}

/// Bar chart with one bar per label.
pub fn bar_chart(
    path: &Path,
    title: &str,
    x_label: &str,
    y_label: &str,
    bars: &[(String, f64)],
) -> Result<()> {
    let mut canvas = Canvas::new();
    let y_max = bars.iter().map(|&(_, v)| v).fold(0.0f64, f64::max).max(1e-6);
    let frame = Frame { x_min: 0.0, x_max: bars.len().max(1) as f64, y_min: 0.0, y_max: y_max * 1.15 };
    draw_frame(&mut canvas, &frame, title, x_label, y_label);

    let slot = (WIDTH - MARGIN_L - MARGIN_R) as f64 / bars.len().max(1) as f64;
    for (i, (label, v)) in bars.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let x0 = MARGIN_L as f64 + i as f64 * slot + slot * 0.2;
        let w = (slot * 0.6).max(2.0);
        let py = frame.py(*v);
        let y1 = (HEIGHT - MARGIN_B) as f64;
        canvas.fill_rect(x0 as i64, py as i64, w as i64, (y1 - py).max(1.0) as i64, color);
        let lx = x0 as i64 + (w as i64 - Canvas::text_width(label)) / 2;
        canvas.text(lx, (HEIGHT - MARGIN_B) as i64 + 18, label, [0, 0, 0]);
        let val = fmt_tick(*v);
        canvas.text(x0 as i64 + (w as i64 - Canvas::text_width(&val)) / 2, py as i64 - 10, &val, [0, 0, 0]);
    }
    canvas.save(path)
}
