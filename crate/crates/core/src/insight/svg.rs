//! Hand-rolled SVG output. Every coordinate is formatted with fixed
//! precision and all inputs arrive in deterministic order, so rendering
//! the same data twice yields identical bytes.

use super::{ArticleStats, DistributionRow};
use crate::error::{Error, Result};
use std::fmt::Write;

const PALETTE: [&str; 10] = [
    "#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948", "#b07aa1", "#ff9da7",
    "#9c755f", "#bab0ac",
];

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScatterPoint {
    pub cx: f64,
    pub cy: f64,
    pub r: f64,
    pub opacity: f64,
}

pub const SCATTER_WIDTH: f64 = 800.0;
pub const SCATTER_HEIGHT: f64 = 500.0;
const MARGIN: f64 = 50.0;

/// Point geometry for the exposure/clicks scatter: x is impressions,
/// y is clicks, and CTR is encoded twice, as both radius and opacity.
pub fn scatter_points(stats: &[ArticleStats]) -> Result<Vec<ScatterPoint>> {
    if stats.is_empty() {
        return Err(Error::Data("scatter plot needs at least one article".into()));
    }
    let max_imp = stats.iter().map(|s| s.total_impressions).max().unwrap() as f64;
    let max_clicks = stats.iter().map(|s| s.total_clicks).max().unwrap() as f64;
    let sx = (SCATTER_WIDTH - 2.0 * MARGIN) / max_imp.max(1.0);
    let sy = (SCATTER_HEIGHT - 2.0 * MARGIN) / max_clicks.max(1.0);
    Ok(stats
        .iter()
        .map(|s| ScatterPoint {
            cx: MARGIN + s.total_impressions as f64 * sx,
            cy: SCATTER_HEIGHT - MARGIN - s.total_clicks as f64 * sy,
            r: 2.0 + 8.0 * s.ctr,
            opacity: 0.2 + 0.8 * s.ctr,
        })
        .collect())
}

/// Scatter of per-article exposure vs clicks; see [`scatter_points`].
pub fn scatter_svg(stats: &[ArticleStats]) -> Result<String> {
    let points = scatter_points(stats)?;
    let mut out = String::new();
    write!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {SCATTER_WIDTH:.0} {SCATTER_HEIGHT:.0}\" \
         width=\"{SCATTER_WIDTH:.0}\" height=\"{SCATTER_HEIGHT:.0}\">\n"
    )
    .unwrap();
    out.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    write!(
        out,
        "<line x1=\"{m:.1}\" y1=\"{b:.1}\" x2=\"{r:.1}\" y2=\"{b:.1}\" stroke=\"#444\"/>\n\
         <line x1=\"{m:.1}\" y1=\"{t:.1}\" x2=\"{m:.1}\" y2=\"{b:.1}\" stroke=\"#444\"/>\n",
        m = MARGIN,
        t = MARGIN,
        b = SCATTER_HEIGHT - MARGIN,
        r = SCATTER_WIDTH - MARGIN,
    )
    .unwrap();
    write!(
        out,
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-size=\"14\" fill=\"#222\">impressions</text>\n",
        SCATTER_WIDTH / 2.0,
        SCATTER_HEIGHT - 12.0
    )
    .unwrap();
    write!(
        out,
        "<text x=\"16\" y=\"{:.1}\" text-anchor=\"middle\" font-size=\"14\" fill=\"#222\" \
         transform=\"rotate(-90 16 {:.1})\">clicks</text>\n",
        SCATTER_HEIGHT / 2.0,
        SCATTER_HEIGHT / 2.0
    )
    .unwrap();
    for (s, p) in stats.iter().zip(points.iter()) {
        write!(
            out,
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"{:.2}\" fill=\"#4e79a7\" fill-opacity=\"{:.3}\">\
             <title>{}: {} impressions, {} clicks, ctr {:.4}</title></circle>\n",
            p.cx,
            p.cy,
            p.r,
            p.opacity,
            esc(&s.news_id),
            s.total_impressions,
            s.total_clicks,
            s.ctr
        )
        .unwrap();
    }
    out.push_str("</svg>\n");
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TreemapRect {
    pub label: String,
    pub value: f64,
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

pub const TREEMAP_WIDTH: f64 = 1000.0;
pub const TREEMAP_HEIGHT: f64 = 600.0;

/// Worst aspect ratio in a row of areas laid along a side of length
/// `side` (Bruls 2000 squarified treemaps).
fn worst(row: &[f64], side: f64) -> f64 {
    let sum: f64 = row.iter().sum();
    let s2 = sum * sum;
    let max = row.iter().cloned().fold(f64::MIN, f64::max);
    let min = row.iter().cloned().fold(f64::MAX, f64::min);
    let side2 = side * side;
    f64::max(side2 * max / s2, s2 / (side2 * min))
}

/// Squarified layout: items are placed in descending area order, rows
/// accept items while the worst aspect ratio improves. Every rectangle's
/// area is exactly proportional to its value.
pub fn treemap_layout(
    items: &[(String, f64)],
    width: f64,
    height: f64,
) -> Result<Vec<TreemapRect>> {
    let positive: Vec<&(String, f64)> = items.iter().filter(|(_, v)| *v > 0.0).collect();
    if positive.is_empty() {
        return Err(Error::Data("treemap needs at least one positive count".into()));
    }
    if positive.iter().any(|(_, v)| !v.is_finite()) {
        return Err(Error::Numeric("treemap received a non-finite count".into()));
    }
    let total: f64 = positive.iter().map(|(_, v)| v).sum();
    let mut order: Vec<(String, f64)> = positive
        .iter()
        .map(|(l, v)| (l.clone(), v * width * height / total))
        .collect();
    order.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));

    let mut out = Vec::with_capacity(order.len());
    let (mut x, mut y, mut w, mut h) = (0.0f64, 0.0f64, width, height);
    let mut i = 0;
    while i < order.len() {
        let side = w.min(h);
        let mut row = vec![order[i].1];
        let mut j = i + 1;
        while j < order.len() {
            let mut with_next = row.clone();
            with_next.push(order[j].1);
            if worst(&with_next, side) <= worst(&row, side) {
                row = with_next;
                j += 1;
            } else {
                break;
            }
        }
        let row_area: f64 = row.iter().sum();
        let thickness = row_area / side;
        let mut offset = 0.0;
        for (k, &area) in row.iter().enumerate() {
            let len = area / thickness;
            let (rx, ry, rw, rh) = if w <= h {
                // lay the row along the top edge
                (x + offset, y, len, thickness)
            } else {
                (x, y + offset, thickness, len)
            };
            out.push(TreemapRect {
                label: order[i + k].0.clone(),
                value: order[i + k].1 * total / (width * height),
                x: rx,
                y: ry,
                w: rw,
                h: rh,
            });
            offset += len;
        }
        if w <= h {
            y += thickness;
            h -= thickness;
        } else {
            x += thickness;
            w -= thickness;
        }
        i = j;
    }
    Ok(out)
}

/// Squarified treemap of recommended counts per subcategory, 1000×600.
pub fn treemap_svg(rows: &[DistributionRow]) -> Result<String> {
    let items: Vec<(String, f64)> = rows
        .iter()
        .map(|r| (r.subcategory.clone(), r.recommended as f64))
        .collect();
    counts_treemap_svg(&items)
}

/// Squarified treemap over arbitrary labeled counts, 1000×600.
pub fn counts_treemap_svg(items: &[(String, f64)]) -> Result<String> {
    let rects = treemap_layout(items, TREEMAP_WIDTH, TREEMAP_HEIGHT)?;
    let mut out = String::new();
    write!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {TREEMAP_WIDTH:.0} {TREEMAP_HEIGHT:.0}\" \
         width=\"{TREEMAP_WIDTH:.0}\" height=\"{TREEMAP_HEIGHT:.0}\">\n"
    )
    .unwrap();
    for (i, r) in rects.iter().enumerate() {
        write!(
            out,
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{}\" \
             stroke=\"white\" stroke-width=\"1\"><title>{}: {:.0}</title></rect>\n",
            r.x,
            r.y,
            r.w,
            r.h,
            PALETTE[i % PALETTE.len()],
            esc(&r.label),
            r.value
        )
        .unwrap();
        if r.w > 60.0 && r.h > 18.0 {
            write!(
                out,
                "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\" fill=\"white\">{}</text>\n",
                r.x + 4.0,
                r.y + 14.0,
                esc(&r.label)
            )
            .unwrap();
        }
    }
    out.push_str("</svg>\n");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats() -> Vec<ArticleStats> {
        (0..12)
            .map(|i| ArticleStats {
                news_id: format!("N{i}"),
                total_impressions: 10 + i * 5,
                total_clicks: i,
                ctr: i as f64 / (10 + i * 5) as f64,
            })
            .collect()
    }

    #[test]
    fn scatter_encodes_ctr_in_both_radius_and_opacity() {
        let s = stats();
        let pts = scatter_points(&s).unwrap();
        for i in 1..s.len() {
            if s[i - 1].ctr < s[i].ctr {
                assert!(pts[i - 1].r < pts[i].r, "radius must grow with ctr");
                assert!(
                    pts[i - 1].opacity < pts[i].opacity,
                    "opacity must grow with ctr"
                );
            }
        }
        // all points inside the canvas
        for p in &pts {
            assert!(p.cx >= 0.0 && p.cx <= SCATTER_WIDTH);
            assert!(p.cy >= 0.0 && p.cy <= SCATTER_HEIGHT);
        }
    }

    #[test]
    fn scatter_svg_is_byte_deterministic() {
        let s = stats();
        let a = scatter_svg(&s).unwrap();
        let b = scatter_svg(&s).unwrap();
        assert_eq!(a, b);
        assert!(a.starts_with("<svg "));
        assert!(a.contains("fill-opacity="));
        assert!(matches!(scatter_svg(&[]), Err(Error::Data(_))));
    }

    fn rows() -> Vec<DistributionRow> {
        [
            ("football_nfl", 27951u64),
            ("basketball_nba", 15000),
            ("golf", 4200),
            ("tennis", 3100),
            ("soccer", 2400),
            ("baseball_mlb", 900),
            ("newsworld", 410),
        ]
        .iter()
        .map(|(s, r)| DistributionRow {
            subcategory: s.to_string(),
            ground_truth: 0,
            recommended: *r,
        })
        .collect()
    }

    #[test]
    fn treemap_areas_are_proportional_within_one_percent() {
        let rows = rows();
        let items: Vec<(String, f64)> = rows
            .iter()
            .map(|r| (r.subcategory.clone(), r.recommended as f64))
            .collect();
        let rects = treemap_layout(&items, TREEMAP_WIDTH, TREEMAP_HEIGHT).unwrap();
        assert_eq!(rects.len(), items.len());
        let total: f64 = items.iter().map(|(_, v)| v).sum();
        let canvas = TREEMAP_WIDTH * TREEMAP_HEIGHT;
        for r in &rects {
            let want = items
                .iter()
                .find(|(l, _)| *l == r.label)
                .map(|(_, v)| v / total * canvas)
                .unwrap();
            let got = r.w * r.h;
            assert!(
                (got - want).abs() / want < 0.01,
                "{}: area {got} vs proportional {want}",
                r.label
            );
            assert!(r.x >= -1e-9 && r.y >= -1e-9);
            assert!(r.x + r.w <= TREEMAP_WIDTH + 1e-6);
            assert!(r.y + r.h <= TREEMAP_HEIGHT + 1e-6);
        }
        // rectangles tile the canvas: total area matches and no pair overlaps
        let sum: f64 = rects.iter().map(|r| r.w * r.h).sum();
        assert!((sum - canvas).abs() / canvas < 1e-9);
        for (i, a) in rects.iter().enumerate() {
            for b in rects.iter().skip(i + 1) {
                let ox = (a.x + a.w).min(b.x + b.w) - a.x.max(b.x);
                let oy = (a.y + a.h).min(b.y + b.h) - a.y.max(b.y);
                if ox > 1e-6 && oy > 1e-6 {
                    panic!("rectangles {} and {} overlap", a.label, b.label);
                }
            }
        }
    }

    #[test]
    fn treemap_svg_is_byte_deterministic_and_canvas_sized() {
        let rows = rows();
        let a = treemap_svg(&rows).unwrap();
        let b = treemap_svg(&rows).unwrap();
        assert_eq!(a, b);
        assert!(a.contains("viewBox=\"0 0 1000 600\""));
        assert!(a.contains("football_nfl"));
    }

    #[test]
    fn treemap_skips_zero_rows_and_rejects_all_zero() {
        let mut rows = rows();
        rows[6].recommended = 0;
        let svg = treemap_svg(&rows).unwrap();
        assert!(!svg.contains("newsworld"));
        for r in rows.iter_mut() {
            r.recommended = 0;
        }
        assert!(matches!(treemap_svg(&rows), Err(Error::Data(_))));
    }

    #[test]
    fn labels_are_xml_escaped() {
        let rows = vec![
            DistributionRow { subcategory: "a&b<c>".into(), ground_truth: 0, recommended: 5 },
            DistributionRow { subcategory: "plain".into(), ground_truth: 0, recommended: 5 },
        ];
        let svg = treemap_svg(&rows).unwrap();
        assert!(svg.contains("a&amp;b&lt;c&gt;"));
        assert!(!svg.contains("a&b<c>"));
    }
}
