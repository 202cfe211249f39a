//! SVG heatmaps for attribution maps.
//!
//! Diverging scale: blue for negative, white for zero, red for positive,
//! normalised by the largest absolute value. One square cell per spatial
//! position; channels are summed.

use std::fmt::Write;

use crate::attribution::AttributionMap;

pub const DEFAULT_CELL_PX: usize = 16;

/// RGB colour of `value` on the diverging scale with half-range `max_abs`.
pub fn diverging_color(value: f64, max_abs: f64) -> (u8, u8, u8) {
    if max_abs <= 0.0 || value == 0.0 {
        return (255, 255, 255);
    }
    let t = (value / max_abs).clamp(-1.0, 1.0);
    let fade = (255.0 * (1.0 - t.abs())).round() as u8;
    if t > 0.0 {
        (255, fade, fade)
    } else {
        (fade, fade, 255)
    }
}

/// Collapses values shaped like an input onto its `(rows, cols)` grid.
pub fn to_grid(shape: &[usize], values: &[f64]) -> (usize, usize, Vec<f64>) {
    match shape {
        [h, w, c] => {
            let grid = (0..h * w).map(|p| values[p * c..(p + 1) * c].iter().sum()).collect();
            (*h, *w, grid)
        }
        [h, w] => (*h, *w, values.to_vec()),
        _ => (1, values.len(), values.to_vec()),
    }
}

pub fn heatmap_svg(shape: &[usize], values: &[f64], cell_px: usize) -> String {
    let (rows, cols, grid) = to_grid(shape, values);
    let max_abs = grid.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let (w, h) = (cols * cell_px, rows * cell_px);
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" shape-rendering="crispEdges">"#
    );
    for r in 0..rows {
        for c in 0..cols {
            let (red, green, blue) = diverging_color(grid[r * cols + c], max_abs);
            let _ = writeln!(
                svg,
                r##"<rect x="{}" y="{}" width="{cell_px}" height="{cell_px}" fill="#{red:02x}{green:02x}{blue:02x}"/>"##,
                c * cell_px,
                r * cell_px
            );
        }
    }
    svg.push_str("</svg>\n");
    svg
}

/// Renders an attribution map; segment-level maps are spread onto pixels.
pub fn attribution_svg(map: &AttributionMap) -> String {
    let (shape, values) = map.pixel_values();
    heatmap_svg(&shape, &values, DEFAULT_CELL_PX)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scale_endpoints() {
        assert_eq!(diverging_color(2.0, 2.0), (255, 0, 0));
        assert_eq!(diverging_color(-2.0, 2.0), (0, 0, 255));
        assert_eq!(diverging_color(0.0, 2.0), (255, 255, 255));
        assert_eq!(diverging_color(1.0, 2.0), (255, 128, 128));
        assert_eq!(diverging_color(1.0, 0.0), (255, 255, 255));
    }

    #[test]
    fn one_cell_per_pixel() {
        let svg = heatmap_svg(&[2, 3, 1], &[1.0, -1.0, 0.0, 0.5, 0.0, 0.0], 4);
        assert_eq!(svg.matches("<rect").count(), 6);
        assert!(svg.contains(r##"x="4" y="0" width="4" height="4" fill="#0000ff""##));
        assert!(svg.contains(r#"width="12" height="8""#));
    }

    #[test]
    fn channels_summed() {
        let (r, c, g) = to_grid(&[1, 2, 2], &[1.0, 2.0, -1.0, -1.0]);
        assert_eq!((r, c), (1, 2));
        assert_eq!(g, vec![3.0, -2.0]);
    }
}
