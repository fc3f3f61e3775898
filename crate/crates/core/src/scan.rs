//! Rank tests over many points: trajectories, grids, CSV and SVG output.

use std::fmt::Write as _;
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linear::{self, LinearDae};
use crate::model::DaeModel;
use crate::ranktest::{Analyzer, EvalPoint, RankOptions, RankReport, Verdict};
use crate::scenarios::{PlotSpec, Scenario, System};
use crate::sim::{DerivativeOracle, Trajectory};

/// One rank test per point, with the machinery built once.
pub enum Checker {
    Generic { analyzer: Analyzer, options: RankOptions },
    Linear { system: LinearDae, max_mu: Option<usize>, tolerance: Option<f64> },
}

impl Checker {
    pub fn identifiability(model: &DaeModel, theta: &[String], options: RankOptions) -> Result<Checker> {
        Ok(Checker::Generic { analyzer: Analyzer::identifiability(&model.augment(theta)?), options })
    }

    pub fn observability(model: &DaeModel, options: RankOptions) -> Checker {
        Checker::Generic { analyzer: Analyzer::observability(model), options }
    }

    /// Highest derivative order any point may need.
    pub fn sigma_needed(&self) -> usize {
        match self {
            Checker::Generic { analyzer, options } => match options.orders {
                Some((mu, nu)) => (mu + 1).max(nu),
                None => options.max_order.unwrap_or_else(|| analyzer.default_max_order()) + 1,
            },
            Checker::Linear { system, max_mu, .. } => max_mu.unwrap_or(system.n()) + 1,
        }
    }

    pub fn check(&self, pt: &EvalPoint) -> Result<RankReport> {
        match self {
            Checker::Generic { analyzer, options } => analyzer.check(pt, options),
            Checker::Linear { system, max_mu, tolerance } => {
                linear::linear_identifiability_search(system, pt, *max_mu, *tolerance)
            }
        }
    }
}

/// Runs `f` over `points` on `jobs` threads; results keep the input order.
pub fn run_parallel<F>(points: &[EvalPoint], jobs: Option<usize>, f: F) -> Result<Vec<RankReport>>
where
    F: Fn(&EvalPoint) -> Result<RankReport> + Sync,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| Error::Usage(format!("cannot start worker pool: {e}")))?;
    pool.install(|| points.par_iter().map(&f).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScanPoint {
    pub index: usize,
    pub time: f64,
    pub state: Vec<f64>,
    pub verdict: Verdict,
    pub deficit: usize,
    pub rank_full: usize,
    pub required: usize,
    pub mu: usize,
    pub ill_conditioned: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScanResult {
    pub scenario: String,
    pub theta_set: String,
    pub sensor: String,
    /// `trajectory` or `grid`.
    pub source: String,
    pub state_names: Vec<String>,
    pub points: Vec<ScanPoint>,
    /// Grid nodes where no consistent state could be found.
    pub skipped: usize,
}

impl ScanResult {
    pub fn from_reports(reports: &[RankReport]) -> Vec<ScanPoint> {
        reports
            .iter()
            .enumerate()
            .map(|(index, r)| ScanPoint {
                index,
                time: r.point.time,
                state: r.point.state().to_vec(),
                verdict: r.verdict,
                deficit: r.deficit,
                rank_full: r.rank_full,
                required: r.required,
                mu: r.mu,
                ill_conditioned: r.ill_conditioned,
            })
            .collect()
    }

    pub fn satisfied(&self) -> usize {
        self.points.iter().filter(|p| p.verdict.is_satisfied()).count()
    }

    /// Fraction of satisfied points among those with `time > after`.
    pub fn fraction_satisfied_after(&self, after: f64) -> f64 {
        let sel: Vec<&ScanPoint> = self.points.iter().filter(|p| p.time > after).collect();
        if sel.is_empty() {
            return 0.0;
        }
        sel.iter().filter(|p| p.verdict.is_satisfied()).count() as f64 / sel.len() as f64
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header: Vec<String> = ["index", "t"].map(String::from).to_vec();
        header.extend(self.state_names.iter().cloned());
        header.extend(["verdict", "deficit", "rank_full", "required", "mu", "ill_conditioned"].map(String::from));
        out.write_record(&header)?;
        for p in &self.points {
            let mut row = vec![p.index.to_string(), p.time.to_string()];
            row.extend(p.state.iter().map(|v| v.to_string()));
            row.push(if p.verdict.is_satisfied() { "satisfied" } else { "not-satisfied" }.into());
            row.extend([p.deficit, p.rank_full, p.required, p.mu].map(|v| v.to_string()));
            row.push(p.ill_conditioned.to_string());
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Two-colour scatter of the points in the plot plane, trajectory overlaid.
    pub fn to_svg(&self, plot: &PlotSpec, trajectory: Option<&Trajectory>) -> Result<String> {
        let ix = self.axis(&plot.x)?;
        let iy = self.axis(&plot.y)?;
        let (w, h, pad) = (640.0, 480.0, 56.0);
        let sx = |v: f64| pad + (v - plot.x_range[0]) / (plot.x_range[1] - plot.x_range[0]) * (w - 2.0 * pad);
        let sy = |v: f64| h - pad - (v - plot.y_range[0]) / (plot.y_range[1] - plot.y_range[0]) * (h - 2.0 * pad);
        let mut s = String::new();
        let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
        let _ = writeln!(s, r#"<rect x="0" y="0" width="{w}" height="{h}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<rect x="{pad}" y="{pad}" width="{}" height="{}" fill="none" stroke="black"/>"#,
            w - 2.0 * pad,
            h - 2.0 * pad
        );
        for p in &self.points {
            let colour = if p.verdict.is_satisfied() { "#1f4e9c" } else { "#c0392b" };
            let _ = writeln!(
                s,
                r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{colour}"/>"#,
                sx(p.state[ix]),
                sy(p.state[iy])
            );
        }
        if let Some(tr) = trajectory {
            let path: Vec<String> =
                tr.states.iter().map(|x| format!("{:.2},{:.2}", sx(x[ix]), sy(x[iy]))).collect();
            let _ = writeln!(s, r##"<polyline points="{}" fill="none" stroke="#444444" stroke-width="0.8"/>"##, path.join(" "));
        }
        let label = |s: &mut String, x: f64, y: f64, anchor: &str, text: &str| {
            let _ = writeln!(s, r#"<text x="{x:.1}" y="{y:.1}" font-size="12" font-family="sans-serif" text-anchor="{anchor}">{text}</text>"#);
        };
        label(&mut s, pad, h - pad + 16.0, "middle", &plot.x_range[0].to_string());
        label(&mut s, w - pad, h - pad + 16.0, "middle", &plot.x_range[1].to_string());
        label(&mut s, w / 2.0, h - 12.0, "middle", &plot.x);
        label(&mut s, pad - 6.0, h - pad, "end", &plot.y_range[0].to_string());
        label(&mut s, pad - 6.0, pad + 4.0, "end", &plot.y_range[1].to_string());
        label(&mut s, 14.0, h / 2.0, "start", &plot.y);
        let title = format!("{} / theta {} / sensor {}", self.scenario, self.theta_set, self.sensor);
        label(&mut s, w / 2.0, 24.0, "middle", &title);
        s.push_str("</svg>\n");
        Ok(s)
    }

    fn axis(&self, name: &str) -> Result<usize> {
        self.state_names
            .iter()
            .position(|s| s == name)
            .ok_or_else(|| Error::Usage(format!("unknown plot axis {name:?}")))
    }
}

/// Consistent points on an `nx` by `ny` grid over the plot plane. Axes must
/// be differential states; the remaining differential states keep their
/// initial values and algebraic states are solved for.
pub fn grid_points(scenario: &Scenario, theta: &[f64], nx: usize, ny: usize, sigma: usize) -> Result<(Vec<EvalPoint>, usize)> {
    if nx == 0 || ny == 0 {
        return Err(Error::Usage("grid needs at least one node per axis".into()));
    }
    let plot = scenario.settings.plot.as_ref().ok_or_else(|| Error::Usage("scenario has no plot plane".into()))?;
    let model = scenario.model()?;
    let names = model.state_names();
    let axis = |n: &str| {
        names[..model.n1()]
            .iter()
            .position(|s| s == n)
            .ok_or_else(|| Error::Usage(format!("grid axis {n:?} is not a differential state")))
    };
    let (ix, iy) = (axis(&plot.x)?, axis(&plot.y)?);
    let node = |k: usize, count: usize, r: [f64; 2]| {
        if count == 1 {
            0.5 * (r[0] + r[1])
        } else {
            r[0] + (r[1] - r[0]) * k as f64 / (count - 1) as f64
        }
    };
    let mut points = Vec::new();
    let mut skipped = 0;
    match &scenario.system {
        System::Linear(d) => {
            let base = d.initial_differential.clone().unwrap_or_else(|| vec![0.0; model.n1()]);
            for j in 0..ny {
                for i in 0..nx {
                    let mut x1 = base.clone();
                    x1[ix] = node(i, nx, plot.x_range);
                    x1[iy] = node(j, ny, plot.y_range);
                    points.push(EvalPoint { theta: theta.to_vec(), derivatives: d.consistent_levels(&x1, sigma)?, time: 0.0 });
                }
            }
        }
        System::Dae(m) => {
            let x0 = m.initial_condition().ok_or_else(|| Error::InvalidModel("no initial condition".into()))?;
            let oracle = DerivativeOracle::new(m, sigma)?;
            let n1 = m.n1();
            for j in 0..ny {
                for i in 0..nx {
                    let mut x1 = x0[..n1].to_vec();
                    x1[ix] = node(i, nx, plot.x_range);
                    x1[iy] = node(j, ny, plot.y_range);
                    let pt = m
                        .solve_algebraic(&x1, &x0[n1..])
                        .and_then(|x2| oracle.point(&[x1.clone(), x2].concat(), theta, 0.0));
                    match pt {
                        Ok(p) => points.push(p),
                        Err(_) => skipped += 1,
                    }
                }
            }
        }
    }
    Ok((points, skipped))
}
