use std::fmt::Write as _;

use anyhow::{bail, Context, Result};
use mixfact::factor::contribution_ratios;
use mixfact::{ColumnKind, FactorModel, MixedDataset};

#[derive(Debug, Clone, PartialEq)]
pub struct BiplotPoint {
    /// Row of the deduplicated dataset.
    pub row: usize,
    pub count: u64,
    pub score: (f64, f64),
    pub color: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiplotFeature {
    pub name: String,
    pub kind: ColumnKind,
    pub arrow: (f64, f64),
}

/// Scores of the unique rows and dimensionless loading arrows on two
/// rotated latent axes.
#[derive(Debug, Clone, PartialEq)]
pub struct BiplotData {
    /// 1-based axis numbers.
    pub axes: (usize, usize),
    /// Contribution ratio of each axis.
    pub contribution: (f64, f64),
    pub color_by: Option<String>,
    pub points: Vec<BiplotPoint>,
    pub features: Vec<BiplotFeature>,
}

impl BiplotData {
    pub fn build(model: &FactorModel, data: &MixedDataset, axes: (usize, usize), color_by: Option<&str>) -> Result<Self> {
        if data.p_x() != model.p_x() || data.q() != model.q() {
            bail!(
                "data has {} continuous and {} binary columns, model expects {} and {}",
                data.p_x(),
                data.q(),
                model.p_x(),
                model.q()
            );
        }
        let (a, b) = (axes.0 - 1, axes.1 - 1);
        if a.max(b) >= model.p_z() {
            bail!("axes {},{} exceed the latent dimension {}", axes.0, axes.1, model.p_z());
        }
        let model = if model.rotation_fixed() {
            model.clone()
        } else {
            model.fix_rotation()?.0
        };
        let sc = model.c().sqrt();
        let w = model.w_tilde() * sc;
        let g = model.g_tilde() * sc;
        let col_ss: Vec<f64> = (0..model.p_z())
            .map(|s| w.column(s).norm_squared() + g.column(s).norm_squared())
            .collect();
        let (p, _) = contribution_ratios(&col_ss)?;

        let schema = data.schema();
        let color_source = match color_by {
            None => None,
            Some(name) => {
                let kind = schema
                    .columns()
                    .iter()
                    .find(|c| c.name == name)
                    .with_context(|| format!("no column named `{name}` to color by"))?
                    .kind;
                let pos = schema.names_of(kind).iter().position(|n| *n == name).expect("column of that kind");
                Some((kind, pos))
            }
        };

        let unique = data.deduplicate();
        let mut points = Vec::with_capacity(unique.n_rows());
        for i in 0..unique.n_rows() {
            let post = model.posterior_missing(unique.x_row(i), unique.y_row(i))?;
            let color = color_source.and_then(|(kind, pos)| match kind {
                ColumnKind::Continuous => unique.x_row(i)[pos],
                ColumnKind::Binary => unique.y_row(i)[pos].map(|v| if v { 1.0 } else { 0.0 }),
            });
            points.push(BiplotPoint {
                row: i,
                count: unique.count(i),
                score: (post.mean[a], post.mean[b]),
                color,
            });
        }
        let mut features = Vec::with_capacity(model.p_x() + model.q());
        for (j, name) in schema.names_of(ColumnKind::Continuous).iter().enumerate() {
            features.push(BiplotFeature {
                name: name.to_string(),
                kind: ColumnKind::Continuous,
                arrow: (w[(j, a)], w[(j, b)]),
            });
        }
        for (j, name) in schema.names_of(ColumnKind::Binary).iter().enumerate() {
            features.push(BiplotFeature {
                name: name.to_string(),
                kind: ColumnKind::Binary,
                arrow: (g[(j, a)], g[(j, b)]),
            });
        }
        Ok(BiplotData {
            axes,
            contribution: (p[a], p[b]),
            color_by: color_by.map(str::to_string),
            points,
            features,
        })
    }
}

fn kind_name(k: ColumnKind) -> &'static str {
    match k {
        ColumnKind::Continuous => "continuous",
        ColumnKind::Binary => "binary",
    }
}

/// One row per unique point, then one row per feature.
pub fn biplot_csv(d: &BiplotData) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let (ax, bx) = (format!("axis{}", d.axes.0), format!("axis{}", d.axes.1));
    let color = d.color_by.clone().unwrap_or_else(|| "color".to_string());
    w.write_record(["kind", "label", "count", ax.as_str(), bx.as_str(), color.as_str()])?;
    for p in &d.points {
        w.write_record([
            "point".to_string(),
            p.row.to_string(),
            p.count.to_string(),
            format!("{:?}", p.score.0),
            format!("{:?}", p.score.1),
            p.color.map(|c| format!("{c:?}")).unwrap_or_default(),
        ])?;
    }
    for f in &d.features {
        w.write_record([
            kind_name(f.kind).to_string(),
            f.name.clone(),
            String::new(),
            format!("{:?}", f.arrow.0),
            format!("{:?}", f.arrow.1),
            String::new(),
        ])?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

const SIZE: f64 = 640.0;
const MARGIN: f64 = 70.0;
const BINARY_COLOR: &str = "#d62728";
const CONTINUOUS_COLOR: &str = "#2ca02c";
const POINT_COLOR: &str = "#4c72b0";

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn gradient(t: f64) -> String {
    let lo = (0x21, 0x66, 0xac);
    let hi = (0xb2, 0x18, 0x2b);
    let mix = |a: i32, b: i32| (a as f64 + (b - a) as f64 * t).round() as i32;
    format!("#{:02x}{:02x}{:02x}", mix(lo.0, hi.0), mix(lo.1, hi.1), mix(lo.2, hi.2))
}

/// Scatter of scores (circle area proportional to multiplicity) with
/// loading arrows from the origin: red for binary, green for continuous
/// variables. Arrows share one scale factor, shown in the legend.
pub fn biplot_svg(d: &BiplotData) -> String {
    let extent = d
        .points
        .iter()
        .flat_map(|p| [p.score.0.abs(), p.score.1.abs()])
        .fold(0.0f64, f64::max);
    let longest = d.features.iter().map(|f| f.arrow.0.hypot(f.arrow.1)).fold(0.0f64, f64::max);
    let extent = if extent > 0.0 { extent } else { longest.max(1.0) };
    let arrow_scale = if longest > 0.0 { 0.9 * extent / longest } else { 1.0 };
    let half = (SIZE - 2.0 * MARGIN) / 2.0;
    let unit = half / (1.05 * extent);
    let cx = SIZE / 2.0;
    let px = |x: f64| cx + x * unit;
    let py = |y: f64| cx - y * unit;

    let colors: Vec<f64> = d.points.iter().filter_map(|p| p.color).collect();
    let (cmin, cmax) = colors
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)));

    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<defs>"#);
    for (id, color) in [("arrow-binary", BINARY_COLOR), ("arrow-continuous", CONTINUOUS_COLOR)] {
        let _ = writeln!(
            s,
            r#"<marker id="{id}" viewBox="0 0 10 10" refX="9" refY="5" markerWidth="7" markerHeight="7" orient="auto"><path d="M0,0 L10,5 L0,10 z" fill="{color}"/></marker>"#
        );
    }
    let _ = writeln!(s, r#"</defs>"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let (lo, hi) = (MARGIN, SIZE - MARGIN);
    let _ = writeln!(
        s,
        r##"<line x1="{lo:.2}" y1="{cx:.2}" x2="{hi:.2}" y2="{cx:.2}" stroke="#888" stroke-width="0.8"/>"##
    );
    let _ = writeln!(
        s,
        r##"<line x1="{cx:.2}" y1="{lo:.2}" x2="{cx:.2}" y2="{hi:.2}" stroke="#888" stroke-width="0.8"/>"##
    );
    let _ = writeln!(
        s,
        r#"<text x="{cx:.2}" y="{:.2}" text-anchor="middle">Axis {} ({:.1}%)</text>"#,
        SIZE - MARGIN / 3.0,
        d.axes.0,
        100.0 * d.contribution.0
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{cx:.2}" text-anchor="middle" transform="rotate(-90 {:.2} {cx:.2})">Axis {} ({:.1}%)</text>"#,
        MARGIN / 3.0,
        MARGIN / 3.0,
        d.axes.1,
        100.0 * d.contribution.1
    );

    let _ = writeln!(s, r#"<g fill-opacity="0.6">"#);
    for p in &d.points {
        let fill = match (p.color, d.color_by.is_some()) {
            (_, false) => POINT_COLOR.to_string(),
            (None, true) => "#999999".to_string(),
            (Some(c), true) => gradient(if cmax > cmin { (c - cmin) / (cmax - cmin) } else { 0.5 }),
        };
        let r = 3.0 * (p.count as f64).sqrt();
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="{r:.2}" fill="{fill}"/>"#,
            px(p.score.0),
            py(p.score.1)
        );
    }
    let _ = writeln!(s, "</g>");

    for f in &d.features {
        let (color, marker) = match f.kind {
            ColumnKind::Binary => (BINARY_COLOR, "arrow-binary"),
            ColumnKind::Continuous => (CONTINUOUS_COLOR, "arrow-continuous"),
        };
        let (x, y) = (px(f.arrow.0 * arrow_scale), py(f.arrow.1 * arrow_scale));
        let _ = writeln!(
            s,
            r#"<line class="{}" x1="{cx:.2}" y1="{cx:.2}" x2="{x:.2}" y2="{y:.2}" stroke="{color}" stroke-width="1.5" marker-end="url(#{marker})"/>"#,
            kind_name(f.kind)
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" fill="{color}">{}</text>"#,
            x + 4.0,
            y - 4.0,
            escape(&f.name)
        );
    }
    let _ = writeln!(
        s,
        r##"<text x="{:.2}" y="{:.2}" fill="#444">arrows x{arrow_scale:.3}</text>"##,
        MARGIN,
        MARGIN / 2.0
    );
    if let Some(name) = &d.color_by {
        let _ = writeln!(
            s,
            r##"<text x="{:.2}" y="{:.2}" fill="#444" text-anchor="end">color: {} ({cmin:.3} to {cmax:.3})</text>"##,
            SIZE - MARGIN,
            MARGIN / 2.0,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}
