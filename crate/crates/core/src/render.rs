//! SVG drawing of a density field, the tessellation it induces and the
//! generator sites.

use std::fmt::Write;

use crate::cvt::{nearest, GeneratorSet, Point};
use crate::grid::ScalarField;

/// Target width of the longer image side in pixels.
const TARGET_PX: f64 = 640.0;

/// Three-stop ramp from dark blue through teal to yellow.
fn ramp(t: f64) -> (u8, u8, u8) {
    const STOPS: [(f64, f64, f64); 3] = [(68.0, 1.0, 84.0), (33.0, 145.0, 140.0), (253.0, 231.0, 37.0)];
    let t = t.clamp(0.0, 1.0) * 2.0;
    let i = (t.floor() as usize).min(1);
    let f = t - i as f64;
    let (a, b) = (STOPS[i], STOPS[i + 1]);
    let mix = |x: f64, y: f64| (x + f * (y - x)).round() as u8;
    (mix(a.0, b.0), mix(a.1, b.1), mix(a.2, b.2))
}

pub fn render_svg(density: &ScalarField, gens: &GeneratorSet, overlay: Option<&[Point]>) -> String {
    let grid = density.grid();
    let (nx, ny) = (grid.nx(), grid.ny());
    let s = (TARGET_PX / nx.max(ny) as f64).max(1.0);
    let (w, h) = (nx as f64 * s, ny as f64 * s);
    // grid y grows upward, SVG y downward
    let px = |p: Point| (p[0] * s, h - p[1] * s);

    let mut out = String::new();
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    )
    .unwrap();
    out.push_str(
        "<style>.generator{fill:#fff;stroke:#000;stroke-width:1}\
         .gauge{fill:none;stroke:#e0115f;stroke-width:2}\
         .boundary{stroke:#fff;stroke-width:1;stroke-opacity:0.8}</style>\n",
    );

    out.push_str("<g class=\"density\">\n");
    let (lo, hi) = density.extrema();
    let span = if hi > lo { hi - lo } else { 1.0 };
    for ((x, y), v) in grid.active_cells().zip(density.values()) {
        let (r, g, b) = ramp((v - lo) / span);
        let (cx, cy) = px([x as f64, y as f64 + 1.0]);
        writeln!(
            out,
            r##"<rect x="{cx}" y="{cy}" width="{s}" height="{s}" fill="#{r:02x}{g:02x}{b:02x}"/>"##
        )
        .unwrap();
    }
    out.push_str("</g>\n");

    // owner of every in-mask cell, then edges between cells with different owners
    let owner: Vec<Option<usize>> = (0..ny)
        .flat_map(|y| (0..nx).map(move |x| (x, y)))
        .map(|(x, y)| grid.in_mask(x, y).then(|| nearest(gens.positions(), grid.center(x, y))))
        .collect();
    out.push_str("<g class=\"boundary\">\n");
    for y in 0..ny {
        for x in 0..nx {
            let Some(a) = owner[y * nx + x] else { continue };
            if x + 1 < nx {
                if let Some(b) = owner[y * nx + x + 1] {
                    if a != b {
                        let (x1, y1) = px([(x + 1) as f64, y as f64]);
                        let (x2, y2) = px([(x + 1) as f64, (y + 1) as f64]);
                        writeln!(out, r#"<line x1="{x1}" y1="{y1}" x2="{x2}" y2="{y2}"/>"#).unwrap();
                    }
                }
            }
            if y + 1 < ny {
                if let Some(b) = owner[(y + 1) * nx + x] {
                    if a != b {
                        let (x1, y1) = px([x as f64, (y + 1) as f64]);
                        let (x2, y2) = px([(x + 1) as f64, (y + 1) as f64]);
                        writeln!(out, r#"<line x1="{x1}" y1="{y1}" x2="{x2}" y2="{y2}"/>"#).unwrap();
                    }
                }
            }
        }
    }
    out.push_str("</g>\n");

    let radius = (s * 1.5).max(3.0);
    for p in gens.positions() {
        let (cx, cy) = px(*p);
        writeln!(out, r#"<circle class="generator" cx="{cx}" cy="{cy}" r="{radius}"/>"#).unwrap();
    }
    if let Some(points) = overlay {
        let d = radius * 1.2;
        for p in points {
            let (cx, cy) = px(*p);
            writeln!(
                out,
                r#"<path class="gauge" d="M{} {}L{} {}M{} {}L{} {}"/>"#,
                cx - d,
                cy - d,
                cx + d,
                cy + d,
                cx - d,
                cy + d,
                cx + d,
                cy - d
            )
            .unwrap();
        }
    }
    out.push_str("</svg>\n");
    out
}
