//! Static log-log convergence plots.

use std::fmt::Write as _;

use gpconv::analysis::{ErrorNormKind, RateFit};
use gpconv::experiments::{ConvergenceRecord, ERROR_FLOOR};
use gpconv::{Error, Result};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 200.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const REF_COLORS: [&str; 4] = ["#888888", "#aa7733", "#3377aa", "#77aa33"];

#[derive(Clone, Debug, PartialEq)]
pub struct PlotRequest {
    /// Sorted by n ascending.
    pub records: Vec<ConvergenceRecord>,
    pub norm: ErrorNormKind,
    pub rate_fit: Option<RateFit>,
    pub reference_slopes: Vec<f64>,
    pub title: String,
    pub output_path: String,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

struct Axes {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Axes {
    fn px(&self, lx: f64) -> f64 {
        LEFT + (lx - self.x0) / (self.x1 - self.x0) * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, ly: f64) -> f64 {
        HEIGHT - BOTTOM - (ly - self.y0) / (self.y1 - self.y0) * (HEIGHT - TOP - BOTTOM)
    }
}

/// Render error against fill distance on log-log axes as a standalone SVG document.
pub fn render_loglog_svg(req: &PlotRequest) -> Result<String> {
    if req.records.len() < 2 {
        return Err(Error::Data(format!("a plot needs at least 2 records, got {}", req.records.len())));
    }
    if req.records.windows(2).any(|w| w[1].n < w[0].n) {
        return Err(Error::Data("plot records must be sorted by n".into()));
    }
    let pts: Vec<(f64, f64)> = req
        .records
        .iter()
        .map(|r| {
            let e = r
                .error(req.norm)
                .ok_or_else(|| Error::Data(format!("records lack the {} error", req.norm)))?;
            Ok((r.fill_distance.log10(), e.max(ERROR_FLOOR).log10()))
        })
        .collect::<Result<_>>()?;
    if pts.iter().any(|(x, _)| !x.is_finite()) {
        return Err(Error::Data("fill distances must be positive".into()));
    }

    let fmin = |it: &mut dyn Iterator<Item = f64>| it.fold(f64::INFINITY, f64::min);
    let fmax = |it: &mut dyn Iterator<Item = f64>| it.fold(f64::NEG_INFINITY, f64::max);
    let mut ax = Axes {
        x0: fmin(&mut pts.iter().map(|p| p.0)).floor(),
        x1: fmax(&mut pts.iter().map(|p| p.0)).ceil(),
        y0: fmin(&mut pts.iter().map(|p| p.1)).floor(),
        y1: fmax(&mut pts.iter().map(|p| p.1)).ceil(),
    };
    if ax.x1 <= ax.x0 {
        ax.x1 = ax.x0 + 1.0;
    }
    if ax.y1 <= ax.y0 {
        ax.y1 = ax.y0 + 1.0;
    }

    let mut s = String::new();
    let w = &mut s;
    writeln!(
        w,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    )
    .unwrap();
    writeln!(w, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#).unwrap();
    writeln!(
        w,
        r#"<text x="{:.2}" y="24" font-family="sans-serif" font-size="15" text-anchor="middle">{}</text>"#,
        (LEFT + WIDTH - RIGHT) / 2.0,
        escape(&req.title)
    )
    .unwrap();

    // frame and decade ticks
    let (fx0, fx1, fy0, fy1) = (ax.px(ax.x0), ax.px(ax.x1), ax.py(ax.y0), ax.py(ax.y1));
    writeln!(
        w,
        r#"<rect x="{fx0:.2}" y="{fy1:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="black"/>"#,
        fx1 - fx0,
        fy0 - fy1
    )
    .unwrap();
    for k in ax.x0 as i32..=ax.x1 as i32 {
        let x = ax.px(k as f64);
        writeln!(w, r##"<line x1="{x:.2}" y1="{fy0:.2}" x2="{x:.2}" y2="{fy1:.2}" stroke="#dddddd"/>"##).unwrap();
        writeln!(
            w,
            r#"<text x="{x:.2}" y="{:.2}" font-family="sans-serif" font-size="12" text-anchor="middle">1e{k}</text>"#,
            fy0 + 18.0
        )
        .unwrap();
    }
    for k in ax.y0 as i32..=ax.y1 as i32 {
        let y = ax.py(k as f64);
        writeln!(w, r##"<line x1="{fx0:.2}" y1="{y:.2}" x2="{fx1:.2}" y2="{y:.2}" stroke="#dddddd"/>"##).unwrap();
        writeln!(
            w,
            r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="12" text-anchor="end">1e{k}</text>"#,
            fx0 - 6.0,
            y + 4.0
        )
        .unwrap();
    }
    writeln!(
        w,
        r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="13" text-anchor="middle">fill distance h</text>"#,
        (fx0 + fx1) / 2.0,
        HEIGHT - 18.0
    )
    .unwrap();
    writeln!(
        w,
        r#"<text x="18" y="{:.2}" font-family="sans-serif" font-size="13" text-anchor="middle" transform="rotate(-90 18 {:.2})">{} error</text>"#,
        (fy0 + fy1) / 2.0,
        (fy0 + fy1) / 2.0,
        req.norm
    )
    .unwrap();

    writeln!(w, r#"<g>"#).unwrap();
    // reference guides through the finest point
    let (ax_f, ay_f) = pts[pts.len() - 1];
    let (ax_c, _) = pts[0];
    for (i, &slope) in req.reference_slopes.iter().enumerate() {
        let c = REF_COLORS[i % REF_COLORS.len()];
        // stop the guide where it leaves the frame
        let (mut x_s, mut y_s) = (ax_c, ay_f + slope * (ax_c - ax_f));
        if y_s > ax.y1 && slope != 0.0 {
            x_s = ax_f + (ax.y1 - ay_f) / slope;
            y_s = ax.y1;
        }
        writeln!(
            w,
            r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{c}" stroke-width="1.5" stroke-dasharray="6,4"/>"#,
            ax.px(x_s),
            ax.py(y_s),
            ax.px(ax_f),
            ax.py(ay_f)
        )
        .unwrap();
    }
    // fitted line over the fitted range of h
    if let Some(f) = &req.rate_fit {
        let mut xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
        xs.sort_by(f64::total_cmp);
        let used = f.points_used.clamp(2, xs.len());
        let (lo, hi) = (xs[0], xs[used - 1]);
        let line = |lx: f64| (f.intercept + f.slope * lx * std::f64::consts::LN_10) / std::f64::consts::LN_10;
        writeln!(
            w,
            r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#cc2222" stroke-width="2"/>"##,
            ax.px(lo),
            ax.py(line(lo)),
            ax.px(hi),
            ax.py(line(hi))
        )
        .unwrap();
    }
    for &(lx, ly) in &pts {
        writeln!(w, r##"<circle cx="{:.2}" cy="{:.2}" r="4" fill="#1f4e99"/>"##, ax.px(lx), ax.py(ly)).unwrap();
    }
    writeln!(w, "</g>").unwrap();

    // legend
    let lx = WIDTH - RIGHT + 16.0;
    let mut ly = TOP + 20.0;
    let fitted = match &req.rate_fit {
        Some(f) => format!("fitted slope {:.2}", f.slope),
        None => "fitted slope n/a".to_string(),
    };
    writeln!(
        w,
        r##"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="#cc2222" stroke-width="2"/>"##,
        lx + 24.0
    )
    .unwrap();
    writeln!(w, r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="12">{fitted}</text>"#, lx + 30.0, ly + 4.0)
        .unwrap();
    for (i, &slope) in req.reference_slopes.iter().enumerate() {
        ly += 20.0;
        let c = REF_COLORS[i % REF_COLORS.len()];
        writeln!(
            w,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{c}" stroke-width="1.5" stroke-dasharray="6,4"/>"#,
            lx + 24.0
        )
        .unwrap();
        writeln!(
            w,
            r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="12">slope {slope}</text>"#,
            lx + 30.0,
            ly + 4.0
        )
        .unwrap();
    }
    writeln!(w, "</svg>").unwrap();
    Ok(s)
}
