//! Static SVG rendering of a traced path: a fan of deformed shapes on the
//! left, the load-factor vs control-displacement curve on the right.
//! Presentation only — no analysis reads these files back.

use std::fmt::Write;

use crate::model::Model;
use crate::solver::EquilibriumPath;

const WIDTH: f64 = 860.0;
const HEIGHT: f64 = 420.0;

struct Panel {
    x0: f64,
    y0: f64,
    w: f64,
    h: f64,
}

impl Panel {
    /// Maps data coordinates into the panel, y up, preserving aspect only in
    /// the sense callers care about (shapes pass equalized ranges).
    fn map(&self, (xmin, xmax): (f64, f64), (ymin, ymax): (f64, f64), x: f64, y: f64) -> (f64, f64) {
        let sx = if xmax > xmin { (x - xmin) / (xmax - xmin) } else { 0.5 };
        let sy = if ymax > ymin { (y - ymin) / (ymax - ymin) } else { 0.5 };
        (self.x0 + sx * self.w, self.y0 + (1.0 - sy) * self.h)
    }
}

fn expand(range: (f64, f64), pad: f64) -> (f64, f64) {
    let span = (range.1 - range.0).max(1e-12);
    (range.0 - pad * span, range.1 + pad * span)
}

/// Renders every `shape_every`-th deformed shape (plus the last) and the
/// equilibrium curve. `control_dof` selects the curve's x axis; without one
/// the point index is used.
pub(crate) fn render_path(
    model: &Model,
    path: &EquilibriumPath,
    control_dof: Option<usize>,
    shape_every: usize,
) -> String {
    let points = &path.points;
    let every = if shape_every == 0 {
        (points.len() / 12).max(1)
    } else {
        shape_every
    };
    let mut picks: Vec<usize> = (0..points.len()).step_by(every).collect();
    if *picks.last().unwrap_or(&0) != points.len() - 1 {
        picks.push(points.len() - 1);
    }

    // Data ranges over all drawn shapes.
    let mut xr = (f64::INFINITY, f64::NEG_INFINITY);
    let mut yr = (f64::INFINITY, f64::NEG_INFINITY);
    for &i in &picks {
        let q = &points[i].state.q;
        for (n, node) in model.nodes.iter().enumerate() {
            let x = node.x + q[3 * n];
            let y = node.y + q[3 * n + 1];
            xr = (xr.0.min(x), xr.1.max(x));
            yr = (yr.0.min(y), yr.1.max(y));
        }
    }
    // Equalize scales so shapes are not distorted.
    let span = (xr.1 - xr.0).max(yr.1 - yr.0).max(1e-12);
    let xc = 0.5 * (xr.0 + xr.1);
    let yc = 0.5 * (yr.0 + yr.1);
    let xr = expand((xc - span / 2.0, xc + span / 2.0), 0.05);
    let yr = expand((yc - span / 2.0, yc + span / 2.0), 0.05);

    let shapes = Panel {
        x0: 30.0,
        y0: 20.0,
        w: 380.0,
        h: 380.0,
    };
    let curve = Panel {
        x0: 470.0,
        y0: 20.0,
        w: 360.0,
        h: 380.0,
    };

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {WIDTH} {HEIGHT}" width="{WIDTH}" height="{HEIGHT}">"#
    );
    let _ = writeln!(
        svg,
        r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );

    for (k, &i) in picks.iter().enumerate() {
        let q = &points[i].state.q;
        let shade = if picks.len() > 1 {
            200 - (160 * k / (picks.len() - 1)) as i32
        } else {
            40
        };
        let mut poly = String::new();
        for (n, node) in model.nodes.iter().enumerate() {
            let (px, py) = shapes.map(xr, yr, node.x + q[3 * n], node.y + q[3 * n + 1]);
            let _ = write!(poly, "{px:.2},{py:.2} ");
        }
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="rgb({shade},{shade},{shade})" stroke-width="1.5"/>"#,
            poly.trim_end()
        );
    }

    // Equilibrium curve: lambda against the control displacement (or index).
    let xs: Vec<f64> = points
        .iter()
        .enumerate()
        .map(|(i, p)| match control_dof {
            Some(dof) => p.state.q[dof],
            None => i as f64,
        })
        .collect();
    let ls: Vec<f64> = points.iter().map(|p| p.state.lambda).collect();
    let cxr = expand(
        xs.iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |acc, &v| {
                (acc.0.min(v), acc.1.max(v))
            }),
        0.05,
    );
    let cyr = expand(
        ls.iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |acc, &v| {
                (acc.0.min(v), acc.1.max(v))
            }),
        0.05,
    );
    if cyr.0 < 0.0 && cyr.1 > 0.0 {
        let (x0, y) = curve.map(cxr, cyr, cxr.0, 0.0);
        let (x1, _) = curve.map(cxr, cyr, cxr.1, 0.0);
        let _ = writeln!(
            svg,
            r#"<line x1="{x0:.2}" y1="{y:.2}" x2="{x1:.2}" y2="{y:.2}" stroke="rgb(200,200,200)" stroke-dasharray="4 3"/>"#
        );
    }
    let mut poly = String::new();
    for (&x, &l) in xs.iter().zip(&ls) {
        let (px, py) = curve.map(cxr, cyr, x, l);
        let _ = write!(poly, "{px:.2},{py:.2} ");
    }
    let _ = writeln!(
        svg,
        r#"<polyline points="{}" fill="none" stroke="rgb(30,60,160)" stroke-width="1.5"/>"#,
        poly.trim_end()
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.0}" y="412" font-size="13" font-family="sans-serif">deformed shapes</text>"#,
        shapes.x0
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.0}" y="412" font-size="13" font-family="sans-serif">load factor vs control displacement</text>"#,
        curve.x0
    );
    svg.push_str("</svg>\n");
    svg
}
