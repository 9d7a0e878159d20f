//! Static SVG of a crackle diagram: scaled pairs colored by component size,
//! the deterministic region `B_{k,p-1}` shaded and the boundary of `Δ_{k,p}`.

use std::fmt::Write as _;

use crackle_core::limits::{ConstantsTable, RegionSpec};

use crate::error::{Error, Result};
use crate::io::DiagramRow;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 640.0;
const PAD: f64 = 56.0;
const PALETTE: [&str; 8] = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#666666"];

/// Numerical confinement check done before rendering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Confinement {
    pub checked: usize,
    /// Pairs whose size has no entry in the constants table.
    pub unchecked: usize,
    pub violations: usize,
}

/// Counts pairs with `death / birth > π_{k,m} + 1e-9`.
pub fn confinement(rows: &[DiagramRow], k: usize, table: &ConstantsTable) -> Confinement {
    let mut c = Confinement::default();
    for r in rows {
        match table.pi(k, r.pair.m) {
            Ok(pi) => {
                c.checked += 1;
                if r.pair.death_scaled > (pi + 1e-9) * r.pair.birth_scaled {
                    c.violations += 1;
                }
            }
            Err(_) => c.unchecked += 1,
        }
    }
    c
}

/// Renders the diagram; fails if any checked pair leaves its `Δ_{k,m}`.
pub fn render_svg(rows: &[DiagramRow], k: usize, p: usize, table: &ConstantsTable) -> Result<(String, Confinement)> {
    let conf = confinement(rows, k, table);
    if conf.violations > 0 {
        return Err(Error::OutsideRegion { count: conf.violations });
    }
    let pi_p = table.pi(k, p).ok();
    let band = if p >= k + 3 { Some(RegionSpec::BKM { k, m: p - 1 }.resolve(table)?) } else { None };
    let b = if p >= k + 3 { table.b(k, p - 1).ok() } else { None };

    let max_birth = rows.iter().map(|r| r.pair.birth_scaled).fold(0.0, f64::max);
    let max_death = rows.iter().map(|r| r.pair.death_scaled).fold(0.0, f64::max);
    let x_max = 1.1 * max_birth.max(b.unwrap_or(0.0)).max(1.0);
    let y_max = 1.1 * max_death.max(x_max * pi_p.unwrap_or(1.0)).max(1.0);
    let sx = |x: f64| PAD + x / x_max * (WIDTH - 2.0 * PAD);
    let sy = |y: f64| HEIGHT - PAD - y / y_max * (HEIGHT - 2.0 * PAD);

    let mut s = String::new();
    let w = &mut s;
    writeln!(w, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#).unwrap();
    writeln!(w, r##"<rect width="100%" height="100%" fill="#ffffff"/>"##).unwrap();
    if let Some(band) = &band {
        for piece in &band.pieces {
            let poly = piece.polygon();
            if poly.len() < 3 {
                continue;
            }
            let pts: Vec<String> = poly.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y.min(y_max)))).collect();
            writeln!(w, r##"<polygon class="band" points="{}" fill="#9ecae1" fill-opacity="0.5" stroke="none"/>"##, pts.join(" "))
                .unwrap();
        }
    }
    let diag_end = x_max.min(y_max);
    writeln!(
        w,
        r##"<line class="diagonal" x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#000000" stroke-width="1"/>"##,
        sx(0.0),
        sy(0.0),
        sx(diag_end),
        sy(diag_end)
    )
    .unwrap();
    if let Some(pi) = pi_p {
        let x_end = x_max.min(y_max / pi);
        writeln!(
            w,
            r##"<line class="delta-boundary" x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#cb181d" stroke-width="1.5" stroke-dasharray="6 4"/>"##,
            sx(0.0),
            sy(0.0),
            sx(x_end),
            sy(pi * x_end)
        )
        .unwrap();
    }
    writeln!(
        w,
        r##"<path class="axes" d="M{:.2},{:.2} L{:.2},{:.2} L{:.2},{:.2}" fill="none" stroke="#000000"/>"##,
        sx(0.0),
        sy(y_max),
        sx(0.0),
        sy(0.0),
        sx(x_max),
        sy(0.0)
    )
    .unwrap();
    writeln!(w, r#"<text x="{:.2}" y="{:.2}" font-size="14" text-anchor="middle">birth / M</text>"#, WIDTH / 2.0, HEIGHT - 16.0).unwrap();
    writeln!(
        w,
        r#"<text x="18" y="{:.2}" font-size="14" text-anchor="middle" transform="rotate(-90 18 {:.2})">death / M</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0
    )
    .unwrap();
    for r in rows {
        let color = PALETTE[r.pair.m % PALETTE.len()];
        writeln!(
            w,
            r#"<circle class="pair m{}" cx="{:.2}" cy="{:.2}" r="2.5" fill="{color}"/>"#,
            r.pair.m,
            sx(r.pair.birth_scaled),
            sy(r.pair.death_scaled)
        )
        .unwrap();
    }
    let mut sizes: Vec<usize> = rows.iter().map(|r| r.pair.m).collect();
    sizes.sort_unstable();
    sizes.dedup();
    for (i, m) in sizes.iter().enumerate() {
        let y = PAD + 18.0 * i as f64;
        let color = PALETTE[m % PALETTE.len()];
        writeln!(w, r#"<circle cx="{:.2}" cy="{y:.2}" r="4" fill="{color}"/>"#, WIDTH - PAD - 40.0).unwrap();
        writeln!(w, r#"<text x="{:.2}" y="{:.2}" font-size="12">m = {m}</text>"#, WIDTH - PAD - 30.0, y + 4.0).unwrap();
    }
    writeln!(w, "</svg>").unwrap();
    Ok((s, conf))
}
