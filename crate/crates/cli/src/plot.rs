//! Static PNG charts: training curves, confusion matrices and error tables.
//! Drawn directly into an `RgbImage` with a 3x5 bitmap font.

use image::{Rgb, RgbImage};
use lidarloc_core::geometry::PoseErrorSummary;
use lidarloc_nets::train::{ConfusionMatrix, MetricLog, Phase};

const WHITE: Rgb<u8> = Rgb([255, 255, 255]);
const BLACK: Rgb<u8> = Rgb([20, 20, 20]);
const GRID: Rgb<u8> = Rgb([220, 220, 220]);
const TRAIN: Rgb<u8> = Rgb([31, 119, 180]);
const VAL: Rgb<u8> = Rgb([255, 127, 14]);
const ORACLE: Rgb<u8> = Rgb([44, 160, 44]);

/// Text scale; glyphs are 3x5 cells of `SCALE` pixels.
const SCALE: u32 = 2;

fn glyph(c: char) -> [&'static str; 5] {
    match c.to_ascii_uppercase() {
        '0' => ["###", "#.#", "#.#", "#.#", "###"],
        '1' => [".#.", "##.", ".#.", ".#.", "###"],
        '2' => ["###", "..#", "###", "#..", "###"],
        '3' => ["###", "..#", "###", "..#", "###"],
        '4' => ["#.#", "#.#", "###", "..#", "..#"],
        '5' => ["###", "#..", "###", "..#", "###"],
        '6' => ["###", "#..", "###", "#.#", "###"],
        '7' => ["###", "..#", "..#", ".#.", ".#."],
        '8' => ["###", "#.#", "###", "#.#", "###"],
        '9' => ["###", "#.#", "###", "..#", "###"],
        'A' => [".#.", "#.#", "###", "#.#", "#.#"],
        'B' => ["##.", "#.#", "##.", "#.#", "##."],
        'C' => [".##", "#..", "#..", "#..", ".##"],
        'D' => ["##.", "#.#", "#.#", "#.#", "##."],
        'E' => ["###", "#..", "##.", "#..", "###"],
        'F' => ["###", "#..", "##.", "#..", "#.."],
        'G' => [".##", "#..", "#.#", "#.#", ".##"],
        'H' => ["#.#", "#.#", "###", "#.#", "#.#"],
        'I' => ["###", ".#.", ".#.", ".#.", "###"],
        'J' => ["..#", "..#", "..#", "#.#", ".#."],
        'K' => ["#.#", "#.#", "##.", "#.#", "#.#"],
        'L' => ["#..", "#..", "#..", "#..", "###"],
        'M' => ["#.#", "###", "###", "#.#", "#.#"],
        'N' => ["##.", "#.#", "#.#", "#.#", "#.#"],
        'O' => [".#.", "#.#", "#.#", "#.#", ".#."],
        'P' => ["##.", "#.#", "##.", "#..", "#.."],
        'Q' => [".#.", "#.#", "#.#", "##.", ".##"],
        'R' => ["##.", "#.#", "##.", "#.#", "#.#"],
        'S' => [".##", "#..", ".#.", "..#", "##."],
        'T' => ["###", ".#.", ".#.", ".#.", ".#."],
        'U' => ["#.#", "#.#", "#.#", "#.#", "###"],
        'V' => ["#.#", "#.#", "#.#", "#.#", ".#."],
        'W' => ["#.#", "#.#", "###", "###", "#.#"],
        'X' => ["#.#", "#.#", ".#.", "#.#", "#.#"],
        'Y' => ["#.#", "#.#", ".#.", ".#.", ".#."],
        'Z' => ["###", "..#", ".#.", "#..", "###"],
        '.' => ["...", "...", "...", "...", ".#."],
        '-' => ["...", "...", "###", "...", "..."],
        '+' => ["...", ".#.", "###", ".#.", "..."],
        '_' => ["...", "...", "...", "...", "###"],
        ':' => ["...", ".#.", "...", ".#.", "..."],
        '/' => ["..#", "..#", ".#.", "#..", "#.."],
        '%' => ["#.#", "..#", ".#.", "#..", "#.#"],
        '(' => [".#.", "#..", "#..", "#..", ".#."],
        ')' => [".#.", "..#", "..#", "..#", ".#."],
        _ => ["...", "...", "...", "...", "..."],
    }
}

pub fn text_width(text: &str) -> u32 {
    text.chars().count() as u32 * 4 * SCALE
}

pub fn draw_text(img: &mut RgbImage, x: i64, y: i64, text: &str, color: Rgb<u8>) {
    draw_text_scaled(img, x, y, text, color, SCALE);
}

fn put(img: &mut RgbImage, x: i64, y: i64, color: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, color);
    }
}

fn draw_text_scaled(img: &mut RgbImage, x: i64, y: i64, text: &str, color: Rgb<u8>, scale: u32) {
    let scale = scale as i64;
    for (i, c) in text.chars().enumerate() {
        let ox = x + (i as i64) * 4 * scale;
        for (row, bits) in glyph(c).iter().enumerate() {
            for (col, b) in bits.bytes().enumerate() {
                if b == b'#' {
                    for dy in 0..scale {
                        for dx in 0..scale {
                            put(
                                img,
                                ox + col as i64 * scale + dx,
                                y + row as i64 * scale + dy,
                                color,
                            );
                        }
                    }
                }
            }
        }
    }
}

fn fill_rect(img: &mut RgbImage, x0: i64, y0: i64, x1: i64, y1: i64, color: Rgb<u8>) {
    for y in y0.min(y1)..y0.max(y1) {
        for x in x0.min(x1)..x0.max(x1) {
            put(img, x, y, color);
        }
    }
}

fn draw_line(img: &mut RgbImage, (x0, y0): (i64, i64), (x1, y1): (i64, i64), color: Rgb<u8>) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        put(img, x, y, color);
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

/// Compact label for an axis value.
pub fn format_value(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-3..1e4).contains(&a) {
        format!("{v:.1e}")
    } else if a >= 100.0 {
        format!("{v:.0}")
    } else if a >= 1.0 {
        format!("{v:.2}")
    } else {
        format!("{v:.3}")
    }
}

/// One line of a panel.
pub struct Series<'a> {
    pub points: Vec<(f64, f64)>,
    pub color: Rgb<u8>,
    pub label: &'a str,
}

const PANEL_W: u32 = 360;
const PANEL_H: u32 = 220;

/// Line chart of several series over a shared x axis, with min/max labels on
/// both axes and a legend.
pub fn line_panel(title: &str, series: &[Series<'_>]) -> RgbImage {
    let mut img = RgbImage::from_pixel(PANEL_W, PANEL_H, WHITE);
    draw_text(&mut img, 8, 6, title, BLACK);
    let (left, right, top, bottom) = (64i64, PANEL_W as i64 - 12, 40i64, PANEL_H as i64 - 30);
    let all = series
        .iter()
        .flat_map(|s| s.points.iter())
        .filter(|p| p.0.is_finite() && p.1.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
    );
    for &(x, y) in all {
        (x0, x1, y0, y1) = (x0.min(x), x1.max(x), y0.min(y), y1.max(y));
    }
    for k in 0..=4 {
        let y = top + (bottom - top) * k / 4;
        draw_line(&mut img, (left, y), (right, y), GRID);
    }
    draw_line(&mut img, (left, top), (left, bottom), BLACK);
    draw_line(&mut img, (left, bottom), (right, bottom), BLACK);
    if !x0.is_finite() {
        draw_text(&mut img, left + 10, (top + bottom) / 2, "NO DATA", BLACK);
        return img;
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        let pad = y0.abs().max(1e-9) * 0.05;
        (y0, y1) = (y0 - pad, y1 + pad);
    }
    let px = |x: f64| left + ((x - x0) / (x1 - x0) * (right - left) as f64).round() as i64;
    let py = |y: f64| bottom - ((y - y0) / (y1 - y0) * (bottom - top) as f64).round() as i64;
    for s in series {
        let pts: Vec<(i64, i64)> = s
            .points
            .iter()
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .map(|&(x, y)| (px(x), py(y)))
            .collect();
        for w in pts.windows(2) {
            draw_line(&mut img, w[0], w[1], s.color);
        }
        for &(x, y) in &pts {
            fill_rect(&mut img, x - 1, y - 1, x + 2, y + 2, s.color);
        }
    }
    draw_text(&mut img, 4, top - 4, &format_value(y1), BLACK);
    draw_text(&mut img, 4, bottom - 6, &format_value(y0), BLACK);
    draw_text(&mut img, left, bottom + 8, &format_value(x0), BLACK);
    let xmax = format_value(x1);
    draw_text(
        &mut img,
        right - text_width(&xmax) as i64,
        bottom + 8,
        &xmax,
        BLACK,
    );
    let mut lx = right;
    for s in series.iter().rev() {
        lx -= text_width(s.label) as i64 + 16;
        fill_rect(&mut img, lx, 8, lx + 8, 16, s.color);
        draw_text(&mut img, lx + 12, 7, s.label, BLACK);
    }
    img
}

/// Stacks panels into a grid `columns` wide.
pub fn grid(panels: &[RgbImage], columns: usize) -> RgbImage {
    let columns = columns.max(1);
    let rows = panels.len().div_ceil(columns).max(1);
    let (w, h) = (PANEL_W, PANEL_H);
    let mut img = RgbImage::from_pixel(
        w * columns.min(panels.len().max(1)) as u32,
        h * rows as u32,
        WHITE,
    );
    for (i, p) in panels.iter().enumerate() {
        image::imageops::replace(
            &mut img,
            p,
            ((i % columns) as u32 * w) as i64,
            ((i / columns) as u32 * h) as i64,
        );
    }
    img
}

/// One panel per logged metric, train and validation series overlaid,
/// plotted against the optimizer step.
pub fn training_curves(log: &MetricLog) -> RgbImage {
    let mut names: Vec<&str> = Vec::new();
    for r in log.records() {
        for k in r.values.keys() {
            if !names.contains(&k.as_str()) {
                names.push(k);
            }
        }
    }
    let panels: Vec<RgbImage> = names
        .iter()
        .map(|name| {
            let points = |phase| {
                log.series(phase, name)
                    .into_iter()
                    .map(|(s, v)| (s as f64, v))
                    .collect()
            };
            line_panel(
                &name.replace('_', " "),
                &[
                    Series {
                        points: points(Phase::Train),
                        color: TRAIN,
                        label: "TRAIN",
                    },
                    Series {
                        points: points(Phase::Val),
                        color: VAL,
                        label: "VAL",
                    },
                ],
            )
        })
        .collect();
    grid(&panels, 2)
}

/// Heat map with the count in every cell; rows are true scenes.
pub fn confusion_heatmap(cm: &ConfusionMatrix) -> RgbImage {
    let n = cm.counts.len().max(1) as u32;
    let cell = 56u32.max(text_width("00000") + 8);
    let (left, top) = (56u32, 56u32);
    let mut img = RgbImage::from_pixel(left + n * cell + 16, top + n * cell + 40, WHITE);
    draw_text(&mut img, 8, 8, "CONFUSION (ROW TRUE / COL PRED)", BLACK);
    for (i, row) in cm.counts.iter().enumerate() {
        let total = row.iter().sum::<usize>().max(1) as f64;
        draw_text(
            &mut img,
            16,
            (top + i as u32 * cell + cell / 2 - 5) as i64,
            &i.to_string(),
            BLACK,
        );
        for (j, &count) in row.iter().enumerate() {
            let frac = count as f64 / total;
            let shade = (255.0 * (1.0 - 0.85 * frac)) as u8;
            let color = Rgb([shade, shade, 255]);
            let (x, y) = (
                (left + j as u32 * cell) as i64,
                (top + i as u32 * cell) as i64,
            );
            fill_rect(
                &mut img,
                x + 1,
                y + 1,
                x + cell as i64 - 1,
                y + cell as i64 - 1,
                color,
            );
            let label = count.to_string();
            let ink = if frac > 0.5 { WHITE } else { BLACK };
            draw_text(
                &mut img,
                x + (cell as i64 - text_width(&label) as i64) / 2,
                y + cell as i64 / 2 - 5,
                &label,
                ink,
            );
        }
    }
    for j in 0..n {
        draw_text(
            &mut img,
            (left + j * cell + cell / 2 - 3) as i64,
            (top - 20) as i64,
            &j.to_string(),
            BLACK,
        );
    }
    let acc = format!("ACCURACY {:.1}%", 100.0 * cm.accuracy());
    draw_text(&mut img, 8, (top + n * cell + 14) as i64, &acc, BLACK);
    img
}

/// Grouped bars of per-axis position errors (meters) and quaternion error,
/// end-to-end next to oracle, one group per row of the table.
pub fn error_bars(rows: &[(String, PoseErrorSummary, PoseErrorSummary)]) -> RgbImage {
    type Metric = (&'static str, fn(&PoseErrorSummary) -> f64);
    let metrics: [Metric; 4] = [
        ("X (M)", |s| s.x),
        ("Y (M)", |s| s.y),
        ("Z (M)", |s| s.z),
        ("QUAT", |s| s.quaternion),
    ];
    let panels: Vec<RgbImage> = metrics
        .iter()
        .map(|(name, get)| {
            let mut img = RgbImage::from_pixel(PANEL_W, PANEL_H, WHITE);
            draw_text(&mut img, 8, 6, name, BLACK);
            for (k, (label, color)) in [("E2E", TRAIN), ("ORACLE", ORACLE)].iter().enumerate() {
                let x = PANEL_W as i64 - 150 + k as i64 * 64;
                fill_rect(&mut img, x, 8, x + 8, 16, *color);
                draw_text(&mut img, x + 12, 7, label, BLACK);
            }
            let (left, right, top, bottom) =
                (12i64, PANEL_W as i64 - 12, 44i64, PANEL_H as i64 - 28);
            draw_line(&mut img, (left, bottom), (right, bottom), BLACK);
            let max = rows
                .iter()
                .flat_map(|(_, a, b)| [get(a), get(b)])
                .fold(0.0f64, f64::max)
                .max(1e-12);
            let slot = (right - left) / rows.len().max(1) as i64;
            for (i, (label, e2e, oracle)) in rows.iter().enumerate() {
                let x = left + i as i64 * slot;
                let bar = (slot - 8) / 2;
                for (k, (v, color)) in [(get(e2e), TRAIN), (get(oracle), ORACLE)]
                    .into_iter()
                    .enumerate()
                {
                    let h = (v / max * (bottom - top - 14) as f64).round() as i64;
                    let bx = x + 4 + k as i64 * bar;
                    fill_rect(&mut img, bx, bottom - h, bx + bar - 2, bottom, color);
                    draw_text_scaled(&mut img, bx, bottom - h - 8, &format_value(v), BLACK, 1);
                }
                draw_text(&mut img, x + 4, bottom + 8, label, BLACK);
            }
            img
        })
        .collect();
    grid(&panels, 2)
}
