//! Static flow diagram of an alignment: one column of stacked rectangles per
//! model (height proportional to topic mass, ordered by display index) and
//! ribbons between consecutive models (width proportional to weight).

use std::fmt::Write;

use crate::report::AlignmentDocument;

pub const WIDTH: f64 = 1000.0;
pub const HEIGHT: f64 = 600.0;
/// Pixels shared by the rectangles of one column, excluding gaps.
pub const COLUMN_BUDGET: f64 = 500.0;
const TOP: f64 = 60.0;
const MARGIN_X: f64 = 60.0;
const BAR_WIDTH: f64 = 24.0;
const MAX_GAP: f64 = 4.0;
const GAP_BUDGET: f64 = 30.0;
/// Links lighter than this fraction of the sample count are not drawn.
const LINK_FLOOR: f64 = 1e-9;

/// Fill color for a path ID; successive IDs step around the hue circle by the
/// golden angle so neighbors stay distinguishable.
pub fn path_color(path: usize) -> String {
    let hue = (path as f64 * 137.507_764).rem_euclid(360.0);
    format!("hsl({hue:.1},62%,52%)")
}

struct Bar {
    top: f64,
    height: f64,
    path: usize,
}

fn px(v: f64) -> String {
    format!("{v:.2}")
}

/// Render the document as a standalone SVG string.
pub fn render_flow(doc: &AlignmentDocument) -> String {
    let n_models = doc.models.len();
    let scale = COLUMN_BUDGET / doc.n_samples.max(1) as f64;
    let spacing = if n_models > 1 { (WIDTH - 2.0 * MARGIN_X - BAR_WIDTH) / (n_models - 1) as f64 } else { 0.0 };
    let column_x: Vec<f64> = (0..n_models).map(|m| MARGIN_X + m as f64 * spacing).collect();

    let mut bars: Vec<Vec<Bar>> = Vec::with_capacity(n_models);
    for (m, info) in doc.models.iter().enumerate() {
        let mut nodes: Vec<_> = doc.node_scores(m).collect();
        nodes.sort_by_key(|n| n.index);
        let total: f64 = nodes.iter().map(|n| n.mass).sum();
        let column_scale = if total > 0.0 { COLUMN_BUDGET / total } else { 0.0 };
        let gap = if info.k > 1 { MAX_GAP.min(GAP_BUDGET / (info.k - 1) as f64) } else { 0.0 };
        let mut order: Vec<usize> = (0..nodes.len()).collect();
        order.sort_by_key(|&i| (nodes[i].display_index, nodes[i].index));
        let mut column: Vec<Bar> = nodes.iter().map(|n| Bar { top: 0.0, height: n.mass * column_scale, path: n.path }).collect();
        let mut y = TOP;
        for i in order {
            column[i].top = y;
            y += column[i].height + gap;
        }
        bars.push(column);
    }

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {WIDTH} {HEIGHT}" width="{WIDTH}" height="{HEIGHT}" data-method="{}">"#,
        doc.method
    );
    out.push_str("<g class=\"links\" fill-opacity=\"0.35\">\n");
    for m in 0..n_models.saturating_sub(1) {
        let Some(pair) = doc.pairs.iter().find(|p| p.m == m && p.m2 == m + 1) else { continue };
        let (left, right) = (&bars[m], &bars[m + 1]);
        let display = |model: usize, k: usize| {
            doc.nodes.iter().find(|n| n.model == model && n.index == k).map_or(k, |n| n.display_index)
        };
        let mut links: Vec<(usize, usize, f64)> = Vec::new();
        for (i, row) in pair.w.iter().enumerate() {
            for (j, &w) in row.iter().enumerate() {
                if w > LINK_FLOOR * doc.n_samples as f64 {
                    links.push((i, j, w));
                }
            }
        }
        let mut out_offset = vec![0.0; left.len()];
        let mut in_offset = vec![0.0; right.len()];
        let mut by_source = links;
        by_source.sort_by_key(|&(i, j, _)| (display(m, i), display(m + 1, j)));
        let mut start = vec![0.0; by_source.len()];
        for (idx, &(i, _, w)) in by_source.iter().enumerate() {
            start[idx] = left[i].top + out_offset[i];
            out_offset[i] += w * scale;
        }
        let mut order: Vec<usize> = (0..by_source.len()).collect();
        order.sort_by_key(|&idx| {
            let (i, j, _) = by_source[idx];
            (display(m + 1, j), display(m, i))
        });
        let x0 = column_x[m] + BAR_WIDTH;
        let x1 = column_x[m + 1];
        let xm = 0.5 * (x0 + x1);
        for idx in order {
            let (i, j, w) = by_source[idx];
            let t = w * scale;
            let y0 = start[idx];
            let y1 = right[j].top + in_offset[j];
            in_offset[j] += t;
            let _ = writeln!(
                out,
                r#"<path class="link" data-source="{}" data-target="{}" data-weight="{}" fill="{}" d="M{} {} C{} {} {} {} {} {} L{} {} C{} {} {} {} {} {} Z"/>"#,
                i,
                j,
                w,
                path_color(left[i].path),
                px(x0), px(y0), px(xm), px(y0), px(xm), px(y1), px(x1), px(y1),
                px(x1), px(y1 + t), px(xm), px(y1 + t), px(xm), px(y0 + t), px(x0), px(y0 + t),
            );
        }
    }
    out.push_str("</g>\n<g class=\"topics\">\n");
    for (m, column) in bars.iter().enumerate() {
        let k = doc.models[m].k;
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="14">K={k}</text>"#,
            px(column_x[m] + BAR_WIDTH / 2.0),
            px(TOP - 16.0)
        );
        for (t, bar) in column.iter().enumerate() {
            let _ = writeln!(
                out,
                r#"<rect class="topic" data-model="{m}" data-k="{k}" data-topic="{t}" data-path="{}" x="{}" y="{}" width="{}" height="{}" fill="{}"><title>K={k} topic {t} path {}</title></rect>"#,
                bar.path,
                px(column_x[m]),
                px(bar.top),
                px(BAR_WIDTH),
                px(bar.height),
                path_color(bar.path),
                bar.path
            );
        }
    }
    out.push_str("</g>\n</svg>\n");
    out
}
