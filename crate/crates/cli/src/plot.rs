//! Raster and histogram figures rendered straight to PNG.

use std::path::Path;

use anyhow::{bail, Context, Result};
use firecast_core::contour::marching_squares;
use firecast_core::ensemble::burned_by;
use firecast_core::eval::{agreement, Histogram};
use firecast_core::{FieldKind, Raster, BACKGROUND_HOURS};
use image::{Rgb, RgbImage};

use crate::font::{draw_text, text_width, GLYPH_H};

const WHITE: Rgb<u8> = Rgb([255, 255, 255]);
const BLACK: Rgb<u8> = Rgb([0, 0, 0]);
const GRAY: Rgb<u8> = Rgb([200, 200, 200]);
const BLUE: Rgb<u8> = Rgb([30, 80, 220]);
const RED: Rgb<u8> = Rgb([220, 30, 30]);

const MARGIN: u32 = 16;
const TITLE_SCALE: u32 = 2;
const LABEL_SCALE: u32 = 1;
const BAR_W: u32 = 14;
const LABEL_GAP: u32 = 4;
const LABEL_W: u32 = 48;
/// Smallest on-screen side of a raster panel in pixels.
const MIN_PANEL: u32 = 256;

type Stops = &'static [(f64, [u8; 3])];

const VIRIDIS: Stops = &[
    (0.0, [68, 1, 84]),
    (0.25, [59, 82, 139]),
    (0.5, [33, 145, 140]),
    (0.75, [94, 201, 98]),
    (1.0, [253, 231, 37]),
];
const MAGMA: Stops = &[
    (0.0, [0, 0, 4]),
    (0.25, [81, 18, 124]),
    (0.5, [183, 55, 121]),
    (0.75, [252, 137, 97]),
    (1.0, [252, 253, 191]),
];
const TERRAIN: Stops = &[
    (0.0, [40, 110, 60]),
    (0.35, [160, 190, 90]),
    (0.7, [180, 140, 100]),
    (1.0, [245, 245, 245]),
];
const GRAYS: Stops = &[(0.0, [0, 0, 0]), (1.0, [255, 255, 255])];

fn lerp_color(stops: Stops, t: f64) -> Rgb<u8> {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    for w in stops.windows(2) {
        let ((a, ca), (b, cb)) = (w[0], w[1]);
        if t <= b {
            let f = if b > a { (t - a) / (b - a) } else { 0.0 };
            let mix = |i: usize| (ca[i] as f64 + f * (cb[i] as f64 - ca[i] as f64)).round() as u8;
            return Rgb([mix(0), mix(1), mix(2)]);
        }
    }
    Rgb(stops[stops.len() - 1].1)
}

/// How one raster kind is drawn.
enum Style {
    Continuous {
        stops: Stops,
        lo: f64,
        hi: f64,
        unit: &'static str,
        /// Sentinel pixels drawn gray.
        sentinel: bool,
        /// Iso-time contour spacing in hours.
        contours: Option<f64>,
    },
    Classes(Vec<(f32, Rgb<u8>, &'static str)>),
}

fn nice_ceiling(v: f64) -> f64 {
    if !(v > 0.0) {
        return 1.0;
    }
    let mag = 10f64.powf(v.log10().floor());
    for m in [1.0, 2.0, 2.5, 5.0, 10.0] {
        if v <= m * mag {
            return m * mag;
        }
    }
    10.0 * mag
}

fn style_for(r: &Raster) -> Style {
    let (lo, hi) = r.min_max();
    match r.kind {
        FieldKind::Arrival | FieldKind::Measurement => Style::Continuous {
            stops: VIRIDIS,
            lo: 0.0,
            hi: BACKGROUND_HOURS as f64,
            unit: "H",
            sentinel: true,
            contours: (r.kind == FieldKind::Arrival).then_some(4.0),
        },
        FieldKind::StdDev => Style::Continuous {
            stops: MAGMA,
            lo: 0.0,
            hi: nice_ceiling(hi as f64),
            unit: "H",
            sentinel: false,
            contours: None,
        },
        FieldKind::Terrain => Style::Continuous {
            stops: TERRAIN,
            lo: lo as f64,
            hi: if hi > lo { hi as f64 } else { lo as f64 + 1.0 },
            unit: "M",
            sentinel: false,
            contours: None,
        },
        FieldKind::Unit => Style::Continuous {
            stops: GRAYS,
            lo: 0.0,
            hi: 1.0,
            unit: "",
            sentinel: false,
            contours: None,
        },
        FieldKind::Mask => Style::Classes(vec![(0.0, WHITE, "OUTSIDE"), (1.0, BLACK, "INSIDE")]),
        FieldKind::Agreement => Style::Classes(vec![
            (agreement::AGREE as f32, BLACK, "AGREE"),
            (agreement::FALSE_NEGATIVE as f32, BLUE, "FALSE NEG"),
            (agreement::FALSE_POSITIVE as f32, RED, "FALSE POS"),
            (agreement::BACKGROUND as f32, WHITE, "NEITHER"),
        ]),
    }
}

fn scale_for(r: &Raster) -> u32 {
    let side = r.rows().max(r.cols()) as u32;
    MIN_PANEL.div_ceil(side).max(1)
}

fn panel_size(r: &Raster) -> (u32, u32) {
    let s = scale_for(r);
    let w = r.cols() as u32 * s + LABEL_GAP * 2 + BAR_W + LABEL_W;
    let h = GLYPH_H * TITLE_SCALE + 8 + r.rows() as u32 * s;
    (w, h)
}

fn fmt_tick(v: f64) -> String {
    if (v - v.round()).abs() < 1e-9 {
        format!("{}", v.round() as i64)
    } else {
        format!("{v:.2}")
    }
}

fn draw_line(img: &mut RgbImage, (x0, y0): (f64, f64), (x1, y1): (f64, f64), color: Rgb<u8>) {
    let steps = ((x1 - x0).abs().max((y1 - y0).abs()).ceil() as usize).max(1);
    for i in 0..=steps {
        let f = i as f64 / steps as f64;
        let (x, y) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        if x >= 0.0 && y >= 0.0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, color);
        }
    }
}

fn fill_rect(img: &mut RgbImage, x: u32, y: u32, w: u32, h: u32, color: Rgb<u8>) {
    for yy in y..(y + h).min(img.height()) {
        for xx in x..(x + w).min(img.width()) {
            img.put_pixel(xx, yy, color);
        }
    }
}

fn draw_panel(img: &mut RgbImage, x0: u32, y0: u32, title: &str, r: &Raster) {
    let s = scale_for(r);
    draw_text(img, x0 as i64, y0 as i64, title, TITLE_SCALE, BLACK);
    let top = y0 + GLYPH_H * TITLE_SCALE + 8;
    let style = style_for(r);
    for row in 0..r.rows() {
        for col in 0..r.cols() {
            let v = r.get(row, col);
            let color = match &style {
                Style::Continuous {
                    stops, lo, hi, sentinel, ..
                } => {
                    if *sentinel && !burned_by(v, BACKGROUND_HOURS as f64) {
                        GRAY
                    } else {
                        lerp_color(stops, (v as f64 - lo) / (hi - lo))
                    }
                }
                Style::Classes(classes) => classes.iter().find(|c| c.0 == v).map_or(GRAY, |c| c.1),
            };
            fill_rect(img, x0 + col as u32 * s, top + row as u32 * s, s, s, color);
        }
    }
    let bar_x = x0 + r.cols() as u32 * s + LABEL_GAP;
    let bar_h = r.rows() as u32 * s;
    match &style {
        Style::Continuous {
            stops,
            lo,
            hi,
            unit,
            contours,
            sentinel,
        } => {
            if let Some(step) = contours {
                let mut t = *step;
                while t < BACKGROUND_HOURS as f64 {
                    let mask = |rr: usize, cc: usize| burned_by(r.get(rr, cc), t);
                    for ring in marching_squares(r, t, mask).rings {
                        for w in ring.windows(2) {
                            let p = |(rr, cc): (f64, f64)| (x0 as f64 + cc * s as f64, top as f64 + rr * s as f64);
                            draw_line(img, p(w[0]), p(w[1]), BLACK);
                        }
                    }
                    t += step;
                }
            }
            for i in 0..bar_h {
                let f = 1.0 - i as f64 / (bar_h - 1).max(1) as f64;
                fill_rect(img, bar_x, top + i, BAR_W, 1, lerp_color(stops, f));
            }
            let label_x = (bar_x + BAR_W + LABEL_GAP) as i64;
            for k in 0..=4 {
                let f = k as f64 / 4.0;
                let v = lo + f * (hi - lo);
                let y = top as f64 + (1.0 - f) * (bar_h - 1) as f64;
                fill_rect(img, bar_x + BAR_W, y as u32, 3, 1, BLACK);
                let label = format!("{}{}", fmt_tick(v), if unit.is_empty() { "" } else { " " }) + unit;
                let ty = (y as i64 - GLYPH_H as i64 / 2).clamp(top as i64, (top + bar_h - GLYPH_H) as i64);
                draw_text(img, label_x + 4, ty, &label, LABEL_SCALE, BLACK);
            }
            if *sentinel {
                let y = (top + bar_h + 4) as i64;
                if y + (GLYPH_H as i64) < img.height() as i64 {
                    fill_rect(img, bar_x, y as u32, BAR_W, GLYPH_H, GRAY);
                    draw_text(img, label_x + 4, y, "NONE", LABEL_SCALE, BLACK);
                }
            }
        }
        Style::Classes(classes) => {
            for (i, (_, color, name)) in classes.iter().enumerate() {
                let y = top + i as u32 * (GLYPH_H + 8);
                fill_rect(img, bar_x, y, BAR_W, GLYPH_H + 2, *color);
                draw_text(img, (bar_x + BAR_W + LABEL_GAP) as i64, y as i64 + 1, name, LABEL_SCALE, BLACK);
            }
        }
    }
}

/// Rasters side by side, each with its own color scale and title.
pub fn render_panels(panels: &[(String, Raster)]) -> Result<RgbImage> {
    if panels.is_empty() {
        bail!("nothing to plot");
    }
    let sizes: Vec<(u32, u32)> = panels.iter().map(|(_, r)| panel_size(r)).collect();
    let width = MARGIN + sizes.iter().map(|s| s.0 + MARGIN).sum::<u32>();
    let height = 2 * MARGIN + sizes.iter().map(|s| s.1).max().unwrap() + GLYPH_H + 8;
    let mut img = RgbImage::from_pixel(width, height, WHITE);
    let mut x = MARGIN;
    for ((title, r), (w, _)) in panels.iter().zip(&sizes) {
        draw_panel(&mut img, x, MARGIN, title, r);
        x += w + MARGIN;
    }
    Ok(img)
}

/// Bar chart of a histogram with edge and zero ticks in hours.
pub fn render_histogram(h: &Histogram, title: &str) -> Result<RgbImage> {
    let bins = h.counts.len();
    if bins == 0 || h.edges.len() != bins + 1 {
        bail!("malformed histogram: {} counts, {} edges", bins, h.edges.len());
    }
    let (plot_w, plot_h) = (((480 / bins).max(2) * bins) as u32, 280u32);
    let left = MARGIN + LABEL_W;
    let top = MARGIN + GLYPH_H * TITLE_SCALE + 12;
    let width = left + plot_w + 2 * MARGIN;
    let height = top + plot_h + 3 * GLYPH_H + 2 * MARGIN;
    let mut img = RgbImage::from_pixel(width, height, WHITE);
    draw_text(&mut img, MARGIN as i64, MARGIN as i64, title, TITLE_SCALE, BLACK);
    let max = h.counts.iter().copied().max().unwrap_or(0).max(1);
    let bw = plot_w / bins as u32;
    for (i, &c) in h.counts.iter().enumerate() {
        let bh = (c as f64 / max as f64 * plot_h as f64).round() as u32;
        fill_rect(&mut img, left + i as u32 * bw, top + plot_h - bh, bw.saturating_sub(1).max(1), bh, BLUE);
    }
    fill_rect(&mut img, left, top + plot_h, plot_w, 1, BLACK);
    fill_rect(&mut img, left - 1, top, 1, plot_h, BLACK);
    let count_label = max.to_string();
    draw_text(
        &mut img,
        (left - 4 - text_width(&count_label, 1)) as i64,
        top as i64,
        &count_label,
        1,
        BLACK,
    );
    draw_text(&mut img, (left - 4 - text_width("0", 1)) as i64, (top + plot_h - GLYPH_H) as i64, "0", 1, BLACK);
    let (lo, hi) = (h.edges[0], h.edges[bins]);
    let mut ticks = vec![lo, hi];
    if lo < 0.0 && hi > 0.0 {
        ticks.push(0.0);
    }
    for v in ticks {
        let x = left as f64 + (v - lo) / (hi - lo) * plot_w as f64;
        let x = (x as u32).min(left + plot_w - 1);
        fill_rect(&mut img, x, top + plot_h, 1, 4, BLACK);
        let label = format!("{} H", fmt_tick(v));
        let tx = x as i64 - text_width(&label, 1) as i64 / 2;
        draw_text(&mut img, tx, (top + plot_h + 6) as i64, &label, 1, BLACK);
    }
    Ok(img)
}

pub fn save_png(img: &RgbImage, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    img.save_with_format(path, image::ImageFormat::Png)
        .with_context(|| format!("writing {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use firecast_core::{GeoPoint, GridSpec};

    fn raster(kind: FieldKind, f: impl Fn(usize, usize) -> f32) -> Raster {
        let g = GridSpec::centered(GeoPoint::new(39.0, -120.0), 16, 16, 800.0);
        let data = (0..256).map(|i| f(i / 16, i % 16)).collect();
        Raster::new(g, kind, data).unwrap()
    }

    #[test]
    fn agreement_classes_use_fixed_colors() {
        let r = raster(FieldKind::Agreement, |row, _| (row % 4) as f32);
        let img = render_panels(&[("AGREEMENT".into(), r)]).unwrap();
        let s = scale_for(&raster(FieldKind::Mask, |_, _| 0.0));
        let top = MARGIN + GLYPH_H * TITLE_SCALE + 8;
        let at = |row: u32| *img.get_pixel(MARGIN + 1, top + row * s + 1);
        assert_eq!(at(0), WHITE);
        assert_eq!(at(1), BLACK);
        assert_eq!(at(2), BLUE);
        assert_eq!(at(3), RED);
    }

    #[test]
    fn rendering_is_deterministic() {
        let r = raster(FieldKind::Arrival, |a, b| ((a + b) as f32 * 2.0).min(48.0));
        let a = render_panels(&[("MEAN".into(), r.clone())]).unwrap();
        let b = render_panels(&[("MEAN".into(), r)]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn histogram_needs_consistent_edges() {
        let h = Histogram::new(-1.0, 1.0, 4).unwrap();
        assert!(render_histogram(&h, "H").is_ok());
        let bad = Histogram {
            edges: vec![0.0],
            counts: vec![1, 2],
        };
        assert!(render_histogram(&bad, "H").is_err());
    }

    #[test]
    fn nice_ceiling_rounds_up() {
        assert_eq!(nice_ceiling(3.2), 5.0);
        assert_eq!(nice_ceiling(0.07), 0.1);
        assert_eq!(nice_ceiling(0.0), 1.0);
    }
}
