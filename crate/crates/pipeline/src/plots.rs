//! Standalone SVG plot emission. Pure string assembly with fixed float
//! formatting, so byte output is deterministic for a given input.

use std::collections::BTreeMap;
use std::fmt::Write;

use fragsurr_core::fragility::Transition;
use fragsurr_core::pca::PcaModel;

use crate::artifacts::TransitionMatrixJson;

/// One plotted curve ensemble: raw members, pointwise median and bands.
pub struct CurveFamily {
    pub members: Vec<Vec<f64>>,
    pub median: Vec<f64>,
    pub bands: BTreeMap<u8, Vec<f64>>,
}

fn f(v: f64) -> String {
    format!("{v:.3}")
}

struct Frame {
    x0: f64,
    y0: f64,
    w: f64,
    h: f64,
    xmin: f64,
    xmax: f64,
    ymin: f64,
    ymax: f64,
    log_x: bool,
}

impl Frame {
    fn sx(&self, x: f64) -> f64 {
        let t = if self.log_x {
            (x.ln() - self.xmin.ln()) / (self.xmax.ln() - self.xmin.ln())
        } else {
            (x - self.xmin) / (self.xmax - self.xmin)
        };
        self.x0 + t.clamp(0.0, 1.0) * self.w
    }

    fn sy(&self, y: f64) -> f64 {
        let t = (y - self.ymin) / (self.ymax - self.ymin);
        self.y0 + self.h - t.clamp(0.0, 1.0) * self.h
    }

    fn polyline(&self, out: &mut String, xs: &[f64], ys: &[f64], style: &str) {
        let mut points = String::new();
        for (x, y) in xs.iter().zip(ys) {
            if !x.is_finite() || !y.is_finite() {
                continue;
            }
            write!(points, "{},{} ", f(self.sx(*x)), f(self.sy(*y))).unwrap();
        }
        writeln!(out, r##"<polyline fill="none" {style} points="{}"/>"##, points.trim()).unwrap();
    }

    fn axes(&self, out: &mut String, title: &str, xlabel: &str, ylabel: &str) {
        writeln!(
            out,
            r##"<rect x="{}" y="{}" width="{}" height="{}" fill="none" stroke="#444" stroke-width="1"/>"##,
            f(self.x0),
            f(self.y0),
            f(self.w),
            f(self.h)
        )
        .unwrap();
        writeln!(
            out,
            r##"<text x="{}" y="{}" font-size="11" text-anchor="middle" font-family="sans-serif">{}</text>"##,
            f(self.x0 + self.w / 2.0),
            f(self.y0 - 6.0),
            title
        )
        .unwrap();
        writeln!(
            out,
            r##"<text x="{}" y="{}" font-size="10" text-anchor="middle" font-family="sans-serif">{}</text>"##,
            f(self.x0 + self.w / 2.0),
            f(self.y0 + self.h + 26.0),
            xlabel
        )
        .unwrap();
        writeln!(
            out,
            r##"<text x="{}" y="{}" font-size="10" text-anchor="middle" font-family="sans-serif" transform="rotate(-90 {} {})">{}</text>"##,
            f(self.x0 - 30.0),
            f(self.y0 + self.h / 2.0),
            f(self.x0 - 30.0),
            f(self.y0 + self.h / 2.0),
            ylabel
        )
        .unwrap();
        // x tick labels at the frame ends
        writeln!(
            out,
            r##"<text x="{}" y="{}" font-size="9" text-anchor="start" font-family="sans-serif">{}</text>"##,
            f(self.x0),
            f(self.y0 + self.h + 12.0),
            f(self.xmin)
        )
        .unwrap();
        writeln!(
            out,
            r##"<text x="{}" y="{}" font-size="9" text-anchor="end" font-family="sans-serif">{}</text>"##,
            f(self.x0 + self.w),
            f(self.y0 + self.h + 12.0),
            f(self.xmax)
        )
        .unwrap();
        writeln!(
            out,
            r##"<text x="{}" y="{}" font-size="9" text-anchor="end" font-family="sans-serif">{}</text>"##,
            f(self.x0 - 3.0),
            f(self.y0 + self.h),
            f(self.ymin)
        )
        .unwrap();
        writeln!(
            out,
            r##"<text x="{}" y="{}" font-size="9" text-anchor="end" font-family="sans-serif">{}</text>"##,
            f(self.x0 - 3.0),
            f(self.y0 + 8.0),
            f(self.ymax)
        )
        .unwrap();
    }
}

fn svg_open(w: f64, h: f64) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n"
    )
}

/// Scree plot: per-component ratios as bars, cumulative curve, and the 99%
/// retention guide at the configured component count.
pub fn scree_plot(model: &PcaModel) -> String {
    let mut out = svg_open(480.0, 320.0);
    let frame = Frame {
        x0: 60.0,
        y0: 30.0,
        w: 380.0,
        h: 230.0,
        xmin: 0.5,
        xmax: model.explained.len() as f64 + 0.5,
        ymin: 0.0,
        ymax: 1.0,
        log_x: false,
    };
    frame.axes(&mut out, "explained variance by component", "component", "ratio");
    let bar_w = frame.w / model.explained.len() as f64 * 0.6;
    for (i, r) in model.explained.iter().enumerate() {
        let cx = frame.sx(i as f64 + 1.0);
        let y = frame.sy(*r);
        writeln!(
            out,
            r##"<rect x="{}" y="{}" width="{}" height="{}" fill="#7a9bbf"/>"##,
            f(cx - bar_w / 2.0),
            f(y),
            f(bar_w),
            f(frame.y0 + frame.h - y)
        )
        .unwrap();
    }
    let xs: Vec<f64> = (1..=model.explained.len()).map(|i| i as f64).collect();
    let mut cum = 0.0;
    let cums: Vec<f64> = model.explained.iter().map(|r| {
        cum += r;
        cum
    }).collect();
    frame.polyline(&mut out, &xs, &cums, r##"stroke="#b03030" stroke-width="1.5""##);
    // 99% retention guide line.
    let y99 = frame.sy(0.99);
    writeln!(
        out,
        r##"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="#b03030" stroke-dasharray="4 3" stroke-width="1"/>"##,
        f(frame.x0),
        f(y99),
        f(frame.x0 + frame.w),
        f(y99)
    )
    .unwrap();
    writeln!(
        out,
        r##"<text x="{}" y="{}" font-size="9" font-family="sans-serif" fill="#b03030">0.99 at k={}</text>"##,
        f(frame.x0 + 4.0),
        f(y99 - 3.0),
        model.k
    )
    .unwrap();
    out.push_str("</svg>\n");
    out
}

/// Pairwise loading panels of the first three components with the
/// strongest-loading inputs labelled.
pub fn biplot(model: &PcaModel, names: &[&str]) -> String {
    let n_pcs = model.k.min(3);
    let pairs: Vec<(usize, usize)> = match n_pcs {
        0 | 1 => vec![],
        2 => vec![(0, 1)],
        _ => vec![(0, 1), (0, 2), (1, 2)],
    };
    let panel = 250.0;
    let mut out = svg_open(40.0 + pairs.len() as f64 * (panel + 30.0), 320.0);
    for (p, (a, b)) in pairs.iter().enumerate() {
        let frame = Frame {
            x0: 50.0 + p as f64 * (panel + 30.0),
            y0: 30.0,
            w: panel,
            h: panel,
            xmin: -0.5,
            xmax: 0.5,
            ymin: -0.5,
            ymax: 0.5,
            log_x: false,
        };
        frame.axes(
            &mut out,
            &format!("PC{} vs PC{}", a + 1, b + 1),
            &format!("PC{} loading", a + 1),
            &format!("PC{} loading", b + 1),
        );
        // Rank inputs by loading magnitude in this plane; label the top 10.
        let mut mag: Vec<(f64, usize)> = (0..model.dims())
            .map(|j| {
                let la = model.loadings[j][*a];
                let lb = model.loadings[j][*b];
                ((la * la + lb * lb).sqrt(), j)
            })
            .collect();
        mag.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap());
        for (rank, (_, j)) in mag.iter().enumerate() {
            let x = frame.sx(model.loadings[*j][*a]);
            let y = frame.sy(model.loadings[*j][*b]);
            writeln!(out, r##"<circle cx="{}" cy="{}" r="1.6" fill="#3a6ea5"/>"##, f(x), f(y))
                .unwrap();
            if rank < 10 {
                writeln!(
                    out,
                    r##"<text x="{}" y="{}" font-size="8" font-family="sans-serif">{}</text>"##,
                    f(x + 2.0),
                    f(y - 2.0),
                    names.get(*j).unwrap_or(&"?")
                )
                .unwrap();
            }
        }
    }
    out.push_str("</svg>\n");
    out
}

/// 3x3 transition matrix heat cells with counts and percentages.
pub fn transition_matrix(m: &TransitionMatrixJson) -> String {
    let cell = 90.0;
    let mut out = svg_open(80.0 + 3.0 * cell + 40.0, 80.0 + 3.0 * cell + 40.0);
    writeln!(
        out,
        r##"<text x="{}" y="20" font-size="12" text-anchor="middle" font-family="sans-serif">transition state matrix (initial row, final column)</text>"##,
        f(40.0 + 1.5 * cell)
    )
    .unwrap();
    let max_pct = m.percentages.iter().flatten().cloned().fold(0.0f64, f64::max).max(1.0);
    for i in 0..3 {
        for j in 0..3 {
            let x = 60.0 + j as f64 * cell;
            let y = 40.0 + i as f64 * cell;
            let pct = m.percentages[i][j];
            let shade = (255.0 - 155.0 * (pct / max_pct)) as u8;
            let fill = if j < i {
                "#eeeeee".to_string()
            } else {
                format!("#{shade:02x}{shade:02x}ff")
            };
            writeln!(
                out,
                r##"<rect x="{}" y="{}" width="{}" height="{}" fill="{}" stroke="#444"/>"##,
                f(x),
                f(y),
                f(cell),
                f(cell),
                fill
            )
            .unwrap();
            let label = if j < i {
                "x".to_string()
            } else {
                format!("{}", m.counts[i][j])
            };
            writeln!(
                out,
                r##"<text x="{}" y="{}" font-size="11" text-anchor="middle" font-family="sans-serif">{}</text>"##,
                f(x + cell / 2.0),
                f(y + cell / 2.0 - 4.0),
                label
            )
            .unwrap();
            if j >= i {
                writeln!(
                    out,
                    r##"<text x="{}" y="{}" font-size="10" text-anchor="middle" font-family="sans-serif" fill="#333">{:.2}%</text>"##,
                    f(x + cell / 2.0),
                    f(y + cell / 2.0 + 12.0),
                    pct
                )
                .unwrap();
            }
        }
    }
    for k in 0..3 {
        writeln!(
            out,
            r##"<text x="40" y="{}" font-size="11" text-anchor="middle" font-family="sans-serif">DS{k}</text>"##,
            f(40.0 + k as f64 * cell + cell / 2.0)
        )
        .unwrap();
        writeln!(
            out,
            r##"<text x="{}" y="{}" font-size="11" text-anchor="middle" font-family="sans-serif">DS{k}</text>"##,
            f(60.0 + k as f64 * cell + cell / 2.0),
            f(40.0 + 3.0 * cell + 16.0)
        )
        .unwrap();
    }
    out.push_str("</svg>\n");
    out
}

const GRID_ORDER: [&str; 5] = ["0-0", "0-1", "0-2", "1-1", "1-2"];
const MAX_MEMBER_LINES: usize = 100;

/// Five-panel attainment-probability grid: grey member curves, banded
/// envelopes and the median per transition.
pub fn fragility_grid(
    grid: &[f64],
    families: &BTreeMap<Transition, CurveFamily>,
    im_name: &str,
    subtitle: &str,
) -> String {
    let panel_w = 230.0;
    let panel_h = 180.0;
    let mut out = svg_open(60.0 + 3.0 * (panel_w + 40.0), 120.0 + 2.0 * (panel_h + 60.0));
    writeln!(
        out,
        r##"<text x="20" y="20" font-size="13" font-family="sans-serif">state-dependent fragility ({subtitle})</text>"##
    )
    .unwrap();
    let (xmin, xmax) = (grid[0], grid[grid.len() - 1]);
    for (idx, tname) in GRID_ORDER.iter().enumerate() {
        let t: Transition = tname.parse().unwrap();
        let Some(fam) = families.get(&t) else { continue };
        let (row, col) = (idx / 3, idx % 3);
        let frame = Frame {
            x0: 60.0 + col as f64 * (panel_w + 40.0),
            y0: 50.0 + row as f64 * (panel_h + 60.0),
            w: panel_w,
            h: panel_h,
            xmin,
            xmax,
            ymin: 0.0,
            ymax: 1.0,
            log_x: xmin > 0.0,
        };
        frame.axes(&mut out, &format!("P[{tname}]"), im_name, "probability");
        for member in fam.members.iter().take(MAX_MEMBER_LINES) {
            frame.polyline(&mut out, grid, member, r##"stroke="#bbbbbb" stroke-width="0.6""##);
        }
        for (pct, band) in &fam.bands {
            if *pct == 50 {
                continue;
            }
            frame.polyline(
                &mut out,
                grid,
                band,
                r##"stroke="#8b1a1a" stroke-width="0.9" stroke-dasharray="5 3""##,
            );
        }
        frame.polyline(&mut out, grid, &fam.median, r##"stroke="#8b1a1a" stroke-width="1.8""##);
    }
    out.push_str("</svg>\n");
    out
}

/// Brute-force vs surrogate median curves per validated transition.
pub fn validation_comparison(
    data: &[(Transition, Vec<f64>, Vec<f64>, Vec<f64>)],
    im_name: &str,
) -> String {
    let panel_w = 230.0;
    let panel_h = 190.0;
    let mut out = svg_open(60.0 + data.len() as f64 * (panel_w + 40.0), 300.0);
    for (idx, (t, grid, mcs, pce)) in data.iter().enumerate() {
        let frame = Frame {
            x0: 60.0 + idx as f64 * (panel_w + 40.0),
            y0: 40.0,
            w: panel_w,
            h: panel_h,
            xmin: grid[0],
            xmax: grid[grid.len() - 1],
            ymin: 0.0,
            ymax: 1.0,
            log_x: grid[0] > 0.0,
        };
        frame.axes(&mut out, &format!("exceedance '{t}'"), im_name, "probability");
        frame.polyline(&mut out, grid, mcs, r##"stroke="#333333" stroke-width="1.6""##);
        frame.polyline(
            &mut out,
            grid,
            pce,
            r##"stroke="#b03030" stroke-width="1.6" stroke-dasharray="6 3""##,
        );
    }
    writeln!(
        out,
        r##"<text x="60" y="285" font-size="10" font-family="sans-serif">solid: brute-force MCS median; dashed: bootstrap-PCE median</text>"#
    )
    .unwrap();
    out.push_str("</svg>\n");
    out
}

/// Error-vs-DoE-size curves on log axes with the reference threshold line.
pub fn error_vs_doe(
    sizes: &[usize],
    rows: &[(String, Vec<f64>)],
    threshold: f64,
    title: &str,
) -> String {
    let mut out = svg_open(480.0, 340.0);
    let all: Vec<f64> = rows.iter().flat_map(|(_, v)| v.iter().cloned()).collect();
    let ymax = all.iter().cloned().fold(threshold, f64::max) * 1.2;
    let frame = Frame {
        x0: 70.0,
        y0: 40.0,
        w: 370.0,
        h: 230.0,
        xmin: sizes[0] as f64,
        xmax: sizes[sizes.len() - 1] as f64,
        ymin: 0.0,
        ymax,
        log_x: true,
    };
    frame.axes(&mut out, title, "DoE size N", "relative error");
    let colors = ["#3a6ea5", "#b03030", "#2e7d32"];
    let xs: Vec<f64> = sizes.iter().map(|n| *n as f64).collect();
    for (i, (label, vals)) in rows.iter().enumerate() {
        let style = format!(
            r##"stroke="{}" stroke-width="1.6""##,
            colors.get(i).unwrap_or(&"#777777")
        );
        frame.polyline(&mut out, &xs, vals, &style);
        writeln!(
            out,
            r##"<text x="{}" y="{}" font-size="10" font-family="sans-serif" fill="{}">{}</text>"##,
            f(frame.x0 + frame.w + 4.0),
            f(frame.sy(*vals.last().unwrap_or(&0.0))),
            colors.get(i).unwrap_or(&"#777777"),
            label
        )
        .unwrap();
    }
    let yt = frame.sy(threshold);
    writeln!(
        out,
        r##"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="#b03030" stroke-dasharray="4 3"/>"##,
        f(frame.x0),
        f(yt),
        f(frame.x0 + frame.w),
        f(yt)
    )
    .unwrap();
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svg_output_is_deterministic_and_wellformed() {
        let m = TransitionMatrixJson {
            counts: [[5, 3, 1], [0, 7, 2], [0, 0, 4]],
            percentages: [[22.7, 13.6, 4.5], [0.0, 31.8, 9.1], [0.0, 0.0, 18.2]],
            total: 22,
        };
        let a = transition_matrix(&m);
        let b = transition_matrix(&m);
        assert_eq!(a, b);
        assert!(a.starts_with("<svg"));
        assert!(a.trim_end().ends_with("</svg>"));
        assert_eq!(a.matches("<rect").count(), 10); // 9 cells + background
    }

    #[test]
    fn fragility_grid_renders_all_panels() {
        let grid: Vec<f64> = (1..=50).map(|i| i as f64 * 0.1).collect();
        let mut families = BTreeMap::new();
        for t in Transition::OBSERVABLE {
            let median: Vec<f64> = grid.iter().map(|x| (x / 5.0).min(1.0)).collect();
            families.insert(
                t,
                CurveFamily {
                    members: vec![median.clone(); 3],
                    median: median.clone(),
                    bands: BTreeMap::from([(10u8, median.clone()), (90u8, median)]),
                },
            );
        }
        let svg = fragility_grid(&grid, &families, "PGA", "test");
        for t in ["0-0", "0-1", "0-2", "1-1", "1-2"] {
            assert!(svg.contains(&format!("P[{t}]")));
        }
    }
}
