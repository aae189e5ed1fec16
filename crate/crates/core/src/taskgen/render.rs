//! Deterministic grayscale rasterization of panel specs.
//!
//! White background (255); shapes are filled polygons/discs whose gray
//! intensity encodes the color index and whose pixels stay strictly inside
//! their 3x3 placement cell. Background line patterns span the whole panel
//! at fixed loci and are drawn beneath shapes.

use super::{PanelSpec, ShapeSpec, ShapeType, Spectra, LINE_PATTERNS};

pub const BACKGROUND: u8 = 255;

/// Gray intensity for a color spectrum index: index 0 is black, the top
/// index a light (but still visible) gray.
pub fn color_intensity(index: u8, spectrum: u8) -> u8 {
    if spectrum <= 1 {
        return 0;
    }
    ((index as u32 * 190) / (spectrum as u32 - 1)) as u8
}

/// Shape radius in pixels for a size index, bounded so the shape plus a
/// 1-pixel margin stays inside its cell.
fn shape_radius(size: u8, spectrum: u8, cell_px: f64) -> f64 {
    let max_r = cell_px / 2.0 - 2.0;
    let min_r = (max_r * 0.35).max(2.0);
    if spectrum <= 1 {
        return max_r;
    }
    min_r + (max_r - min_r) * size as f64 / (spectrum as f64 - 1.0)
}

fn polygon_vertices(shape: ShapeType, cx: f64, cy: f64, r: f64) -> Vec<(f64, f64)> {
    let ring = |n: usize, r0: f64, phase: f64| -> Vec<(f64, f64)> {
        (0..n)
            .map(|i| {
                let ang = phase + i as f64 * std::f64::consts::TAU / n as f64;
                (cx + r0 * ang.cos(), cy + r0 * ang.sin())
            })
            .collect()
    };
    let up = -std::f64::consts::FRAC_PI_2;
    match shape {
        ShapeType::Circle => Vec::new(), // handled analytically
        ShapeType::Triangle => ring(3, r, up),
        ShapeType::Square => ring(4, r, up + std::f64::consts::FRAC_PI_4),
        ShapeType::Pentagon => ring(5, r, up),
        ShapeType::Star => {
            // 5-pointed star: alternate outer and inner radius.
            (0..10)
                .map(|i| {
                    let ang = up + i as f64 * std::f64::consts::TAU / 10.0;
                    let rr = if i % 2 == 0 { r } else { r * 0.45 };
                    (cx + rr * ang.cos(), cy + rr * ang.sin())
                })
                .collect()
        }
    }
}

/// Even-odd point-in-polygon test (handles the star's concavity).
fn point_in_polygon(px: f64, py: f64, verts: &[(f64, f64)]) -> bool {
    let mut inside = false;
    let n = verts.len();
    let mut j = n - 1;
    for i in 0..n {
        let (xi, yi) = verts[i];
        let (xj, yj) = verts[j];
        if (yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

fn draw_shape(canvas: &mut [u8], side: usize, spec: &ShapeSpec, spectra: &Spectra) {
    let cell_px = side as f64 / 3.0;
    let row = (spec.cell / 3) as f64;
    let col = (spec.cell % 3) as f64;
    let cx = (col + 0.5) * cell_px;
    let cy = (row + 0.5) * cell_px;
    let r = shape_radius(spec.size, spectra.sizes, cell_px);
    let gray = color_intensity(spec.color, spectra.colors);
    let verts = polygon_vertices(spec.shape_type, cx, cy, r);

    let x_lo = (cx - r).floor().max(0.0) as usize;
    let x_hi = ((cx + r).ceil() as usize).min(side - 1);
    let y_lo = (cy - r).floor().max(0.0) as usize;
    let y_hi = ((cy + r).ceil() as usize).min(side - 1);
    for y in y_lo..=y_hi {
        for x in x_lo..=x_hi {
            let fx = x as f64 + 0.5;
            let fy = y as f64 + 0.5;
            let hit = if spec.shape_type == ShapeType::Circle {
                let dx = fx - cx;
                let dy = fy - cy;
                dx * dx + dy * dy <= r * r
            } else {
                point_in_polygon(fx, fy, &verts)
            };
            if hit {
                canvas[y * side + x] = gray;
            }
        }
    }
}

/// Fixed loci of the background line patterns.
fn draw_line_pattern(canvas: &mut [u8], side: usize, pattern: usize, gray: u8) {
    let s = side as f64;
    let thick = (s / 40.0).max(1.5);
    let mut plot = |pred: &dyn Fn(f64, f64) -> bool| {
        for y in 0..side {
            for x in 0..side {
                if pred(x as f64 + 0.5, y as f64 + 0.5) {
                    canvas[y * side + x] = gray;
                }
            }
        }
    };
    match pattern {
        // horizontal mid-line
        0 => plot(&|_, y| (y - s / 2.0).abs() <= thick),
        // vertical mid-line
        1 => plot(&|x, _| (x - s / 2.0).abs() <= thick),
        // down diagonal
        2 => plot(&|x, y| (y - x).abs() <= thick * std::f64::consts::SQRT_2),
        // up diagonal
        3 => plot(&|x, y| (y - (s - x)).abs() <= thick * std::f64::consts::SQRT_2),
        // border frame
        4 => plot(&|x, y| {
            x <= 2.0 * thick || y <= 2.0 * thick || x >= s - 2.0 * thick || y >= s - 2.0 * thick
        }),
        // large centered ring
        5 => plot(&|x, y| {
            let d = ((x - s / 2.0).powi(2) + (y - s / 2.0).powi(2)).sqrt();
            (d - 0.42 * s).abs() <= thick
        }),
        _ => unreachable!("unknown line pattern"),
    }
}

/// Rasterize one panel to a side x side grayscale buffer.
pub fn render_panel(panel: &PanelSpec, side: u16, spectra: &Spectra) -> Vec<u8> {
    let side = side as usize;
    let mut canvas = vec![BACKGROUND; side * side];
    for p in 0..LINE_PATTERNS {
        if let Some(intensity) = panel.lines[p] {
            draw_line_pattern(&mut canvas, side, p, color_intensity(intensity, spectra.colors));
        }
    }
    for shape in &panel.shapes {
        draw_shape(&mut canvas, side, shape, spectra);
    }
    canvas
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_panel_is_uniform_background() {
        let r = render_panel(&PanelSpec::empty(), 64, &Spectra::default());
        assert!(r.iter().all(|&p| p == BACKGROUND));
    }

    #[test]
    fn rendering_is_deterministic() {
        let mut p = PanelSpec::empty();
        p.shapes.push(ShapeSpec { shape_type: ShapeType::Star, size: 7, color: 2, cell: 4 });
        p.lines[0] = Some(1);
        let a = render_panel(&p, 80, &Spectra::default());
        let b = render_panel(&p, 80, &Spectra::default());
        assert_eq!(a, b);
    }

    /// Bounding-box scan: a shape's pixels never escape its placement cell.
    #[test]
    fn shape_pixels_stay_inside_their_cell() {
        let spectra = Spectra::default();
        for &shape_type in &super::super::SHAPE_TYPES {
            for size in [0u8, spectra.sizes - 1] {
                let mut p = PanelSpec::empty();
                p.shapes.push(ShapeSpec { shape_type, size, color: 0, cell: 0 });
                let side = 66usize;
                let r = render_panel(&p, side as u16, &spectra);
                let cell = side / 3;
                for y in 0..side {
                    for x in 0..side {
                        if r[y * side + x] != BACKGROUND {
                            assert!(
                                x < cell && y < cell,
                                "{shape_type:?} size {size}: pixel ({x},{y}) outside cell 0"
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn all_shapes_draw_some_pixels() {
        let spectra = Spectra::default();
        for &shape_type in &super::super::SHAPE_TYPES {
            let mut p = PanelSpec::empty();
            p.shapes.push(ShapeSpec { shape_type, size: 0, color: 0, cell: 8 });
            let r = render_panel(&p, 64, &spectra);
            let ink = r.iter().filter(|&&v| v != BACKGROUND).count();
            assert!(ink > 4, "{shape_type:?} rendered only {ink} pixels");
        }
    }

    #[test]
    fn line_patterns_cover_fixed_loci() {
        let spectra = Spectra::default();
        for pat in 0..LINE_PATTERNS {
            let mut p = PanelSpec::empty();
            p.lines[pat] = Some(0);
            let r = render_panel(&p, 64, &spectra);
            assert!(r.iter().any(|&v| v != BACKGROUND), "pattern {pat} drew nothing");
        }
    }
}
