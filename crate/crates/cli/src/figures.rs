//! Figure-reproduction recipes. Each recipe emits one table per panel with
//! the result-row columns, plus summary tables where a panel is a fit.

use twist_echo::error::Error;
use twist_echo::metrology::{optimal_twisting, twin_fock_qfi};
use twist_echo::optimize::{linspace, logspace};
use twist_echo::spin::SpinSystem;
use twist_echo::spinor::{SpinorMeasurement, SpinorVariant};

use crate::config::{NoiseSpec, Point, Protocol, SweepParameter, Twisting};
use crate::run::{run_points, Batch, ResultRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, clap::ValueEnum)]
pub enum Recipe {
    Fig3,
    Fig4,
    Fig5,
    Fig6,
    Fig7,
    Fig8,
}

impl Recipe {
    pub fn name(self) -> &'static str {
        match self {
            Recipe::Fig3 => "fig3",
            Recipe::Fig4 => "fig4",
            Recipe::Fig5 => "fig5",
            Recipe::Fig6 => "fig6",
            Recipe::Fig7 => "fig7",
            Recipe::Fig8 => "fig8",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RecipeOptions {
    pub max_n: Option<usize>,
    pub threads: Option<usize>,
    pub timing: bool,
}

/// Contents of one output file.
#[derive(Debug, Clone)]
pub enum Table {
    Rows(Vec<ResultRow>),
    Summary { header: Vec<String>, records: Vec<Vec<String>> },
}

#[derive(Debug, Clone)]
pub struct Panel {
    pub file: String,
    pub table: Table,
}

#[derive(Debug, thiserror::Error)]
pub enum RecipeError {
    #[error(transparent)]
    Numerical(#[from] Error),
    #[error("worker pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
    #[error("{0}")]
    Empty(String),
}

/// Rows of all panels together with the errors of failed rows.
#[derive(Debug, Clone)]
pub struct RecipeOutput {
    pub panels: Vec<Panel>,
    pub batch: Batch,
}

struct Runner {
    opts: RecipeOptions,
    all: Batch,
}

impl Runner {
    fn n(&self, caption: usize) -> usize {
        self.opts.max_n.map_or(caption, |m| caption.min(m))
    }

    fn run(&mut self, points: &[Point]) -> Result<Vec<ResultRow>, RecipeError> {
        let batch = run_points(points, self.opts.threads, self.opts.timing)?;
        self.all.rows.extend(batch.rows.iter().cloned());
        self.all.errors.extend(batch.errors);
        Ok(batch.rows)
    }
}

fn sweep<F>(parameter: SweepParameter, values: &[f64], make: F) -> Vec<Point>
where
    F: Fn(f64) -> Point,
{
    values.iter().map(|&v| make(v).tagged(parameter, v)).collect()
}

fn range(start: f64, stop: f64, step: f64) -> Vec<f64> {
    let n = ((stop - start) / step + 1e-9).floor() as usize + 1;
    (0..n).map(|i| start + i as f64 * step).collect()
}

/// σ grid of the noise panels: 0 followed by a log grid from 0.1 to 1000.
fn sigma_grid() -> Vec<f64> {
    std::iter::once(0.0).chain(logspace(0.1, 1000.0, 25)).collect()
}

fn rows(panel: &str, rows: Vec<ResultRow>) -> Panel {
    Panel {
        file: format!("{panel}.csv"),
        table: Table::Rows(rows),
    }
}

fn constant(sigma: f64) -> NoiseSpec {
    NoiseSpec::Constant { sigma }
}

/// N = 10³, θ = 0.001: magnification and SNR against squeezing (r = 1) and
/// against the echo ratio (−10 dB), for TACT, OAT and the one-mode model.
fn fig3(r: &mut Runner) -> Result<Vec<Panel>, RecipeError> {
    let n = r.n(1000);
    let theta = 0.001;
    let protocols = [Protocol::TactEcho, Protocol::OatEcho, Protocol::OneMode];
    let levels = range(0.5, 10.0, 0.5).into_iter().map(|x| -x).collect::<Vec<_>>();
    let mut points = Vec::new();
    for p in protocols {
        points.extend(sweep(SweepParameter::SqueezingDb, &levels, |db| {
            Point::new(p, n, Twisting::SqueezingDb(db), 1.0).fixed_theta(theta)
        }));
    }
    let ab = r.run(&points)?;
    let ratios = range(0.0, 3.0, 0.1);
    let mut points = Vec::new();
    for p in protocols {
        points.extend(sweep(SweepParameter::EchoRatio, &ratios, |e| {
            Point::new(p, n, Twisting::SqueezingDb(-10.0), e).fixed_theta(theta)
        }));
    }
    let cd = r.run(&points)?;
    Ok(vec![
        rows("fig3a", ab.clone()),
        rows("fig3b", ab),
        rows("fig3c", cd.clone()),
        rows("fig3d", cd),
    ])
}

/// N = 10³ at −6 dB: gain against θ (σ_CSS), against σ (θ optimized) and
/// against r (σ ∈ {0, 10}), TACT on the left panels, OAT on the right.
fn fig4(r: &mut Runner) -> Result<Vec<Panel>, RecipeError> {
    let n = r.n(1000);
    let tw = Twisting::SqueezingDb(-6.0);
    let echo_ratios = [0.0, 1.0, 2.0, 3.0];
    let thetas = logspace(1e-4, 0.1, 31);
    let sigmas = sigma_grid();
    let ratios = range(0.0, 3.0, 0.1);
    let mut panels = Vec::new();
    for (protocol, names) in [(Protocol::TactEcho, ["fig4a", "fig4b", "fig4c"]), (Protocol::OatEcho, ["fig4d", "fig4e", "fig4f"])] {
        let mut with_reference = vec![protocol];
        if protocol == Protocol::TactEcho {
            with_reference.push(Protocol::OneMode);
        }
        let mut phase = Vec::new();
        let mut noise = Vec::new();
        for &p in &with_reference {
            for &e in &echo_ratios {
                phase.extend(sweep(SweepParameter::Theta, &thetas, |t| {
                    Point::new(p, n, tw, e).fixed_theta(t).noise(NoiseSpec::CssLevel)
                }));
                noise.extend(sweep(SweepParameter::NoiseSigma, &sigmas, |s| {
                    let base = Point::new(p, n, tw, e).noise(constant(s));
                    if p == Protocol::OneMode {
                        base.fixed_theta(0.0)
                    } else {
                        base.optimized_theta()
                    }
                }));
            }
        }
        let mut ratio = Vec::new();
        for s in [0.0, 10.0] {
            ratio.extend(sweep(SweepParameter::EchoRatio, &ratios, |e| {
                Point::new(protocol, n, tw, e).optimized_theta().noise(constant(s))
            }));
        }
        panels.push(rows(names[0], r.run(&phase)?));
        panels.push(rows(names[1], r.run(&noise)?));
        panels.push(rows(names[2], r.run(&ratio)?));
    }
    Ok(panels)
}

/// N = 10³ at the QFI-optimal twisting: FI against σ with θ fixed at its
/// optimum for σ_CSS, and against r at θ = 0.002 for σ ∈ {0, 10}.
fn fig5(r: &mut Runner) -> Result<Vec<Panel>, RecipeError> {
    let n = r.n(1000);
    let t_chi = optimal_twisting(SpinSystem::new(n)?)?.t_chi;
    let tw = Twisting::TChi(t_chi);
    let protocols = [Protocol::TactEcho, Protocol::OatEcho];
    let echo_ratios = [0.0, 1.0, 2.0];
    let calibration: Vec<Point> = protocols
        .iter()
        .flat_map(|&p| {
            echo_ratios
                .iter()
                .map(move |&e| Point::new(p, n, tw, e).optimized_theta().noise(NoiseSpec::CssLevel))
        })
        .collect();
    let calibrated = r.run(&calibration)?;
    let sigmas = sigma_grid();
    let mut noise = Vec::new();
    for (base, row) in calibration.iter().zip(&calibrated) {
        let Some(theta) = row.theta.filter(|_| !row.failed()) else {
            continue;
        };
        noise.extend(sweep(SweepParameter::NoiseSigma, &sigmas, |s| {
            Point::new(base.protocol, n, tw, base.echo_ratio).fixed_theta(theta).noise(constant(s))
        }));
    }
    let a = r.run(&noise)?;
    let ratios = range(0.0, 3.0, 0.1);
    let mut panels = vec![rows("fig5a", a)];
    for (name, s) in [("fig5b", 0.0), ("fig5c", 10.0)] {
        let mut points = Vec::new();
        for p in protocols {
            points.extend(sweep(SweepParameter::EchoRatio, &ratios, |e| {
                Point::new(p, n, tw, e).fixed_theta(0.002).noise(constant(s))
            }));
        }
        panels.push(rows(name, r.run(&points)?));
    }
    Ok(panels)
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(points: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// FI against N for σ = √N/10 at the QFI-optimal twisting of each N, with and
/// without echo, plus the fitted log-log slopes.
fn fig6(r: &mut Runner) -> Result<Vec<Panel>, RecipeError> {
    let max_n = r.opts.max_n.unwrap_or(1600);
    let sizes: Vec<usize> = [100, 200, 400, 800, 1600].into_iter().filter(|&n| n <= max_n).collect();
    if sizes.is_empty() {
        return Err(RecipeError::Empty(format!("no atom number in the recipe is <= {max_n}")));
    }
    let noise = NoiseSpec::SqrtNScaled { coefficient: 0.1 };
    let series = [(Protocol::TactEcho, 1.0), (Protocol::OatEcho, 1.0), (Protocol::TactEcho, 0.0)];
    let mut points = Vec::new();
    for &n in &sizes {
        let tw = Twisting::TChi(optimal_twisting(SpinSystem::new(n)?)?.t_chi);
        for &(p, e) in &series {
            points.push(
                Point::new(p, n, tw, e)
                    .optimized_theta()
                    .noise(noise)
                    .tagged(SweepParameter::NAtoms, n as f64),
            );
        }
    }
    let fi = r.run(&points)?;
    let mut records = Vec::new();
    for &(p, e) in &series {
        let data: Vec<(f64, f64)> = fi
            .iter()
            .filter(|row| row.protocol == p && row.echo_ratio == e)
            .filter_map(|row| row.noisy_fisher_information.map(|f| (row.n_atoms as f64, f)))
            .collect();
        let slope = log_log_slope(&data);
        records.push(vec![
            crate::run::format_float(e),
            serde_json::to_value(p).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default(),
            data.len().to_string(),
            slope.map(crate::run::format_float).unwrap_or_default(),
        ]);
    }
    Ok(vec![
        rows("fig6", fi),
        Panel {
            file: "fig6_slopes.csv".into(),
            table: Table::Summary {
                header: ["echo_ratio", "protocol", "points", "slope"].map(String::from).to_vec(),
                records,
            },
        },
    ])
}

/// Spinor implementation at N = 10³, θ = 0.002: FI against twisting strength
/// for r ∈ {0, 1}, then noise robustness at the twisting strength maximizing
/// the realistic FI, and the echo-ratio inset at σ_CSS.
fn fig7(r: &mut Runner) -> Result<Vec<Panel>, RecipeError> {
    let n = r.n(1000);
    let theta = 0.002;
    let t_chis: Vec<f64> = range(0.5, 2.5, 0.1).into_iter().map(|g| g / n as f64).collect();
    let series: [(Protocol, SpinorVariant, SpinorMeasurement); 5] = [
        (Protocol::TactEcho, SpinorVariant::Full, SpinorMeasurement::Cropped),
        (Protocol::SpinorEcho, SpinorVariant::FwmOnly, SpinorMeasurement::Separate),
        (Protocol::SpinorEcho, SpinorVariant::Full, SpinorMeasurement::Separate),
        (Protocol::SpinorEcho, SpinorVariant::Full, SpinorMeasurement::Cropped),
        (Protocol::OneMode, SpinorVariant::Full, SpinorMeasurement::Cropped),
    ];
    let mut points = Vec::new();
    for e in [0.0, 1.0] {
        for &(p, v, m) in &series {
            points.extend(sweep(SweepParameter::TChi, &t_chis, |t| {
                Point::new(p, n, Twisting::TChi(t), e)
                    .fixed_theta(theta)
                    .spinor(v, m)
            }));
        }
    }
    let a = r.run(&points)?;
    let best = a
        .iter()
        .filter(|row| {
            row.protocol == Protocol::SpinorEcho
                && row.echo_ratio == 1.0
                && row.spinor_variant == Some(SpinorVariant::Full)
                && row.spinor_measurement == Some(SpinorMeasurement::Cropped)
        })
        .filter_map(|row| Some((row.t_chi?, row.fisher_information?)))
        .max_by(|x, y| x.1.total_cmp(&y.1))
        .map(|(t, _)| t)
        .ok_or_else(|| RecipeError::Empty("no realistic spinor point succeeded".into()))?;
    let tw = Twisting::TChi(best);
    let sigmas = sigma_grid();
    let mut points = Vec::new();
    for e in [0.0, 1.0, 2.0] {
        for p in [Protocol::TactEcho, Protocol::SpinorEcho] {
            points.extend(sweep(SweepParameter::NoiseSigma, &sigmas, |s| {
                Point::new(p, n, tw, e).fixed_theta(theta).noise(constant(s))
            }));
        }
    }
    let b = r.run(&points)?;
    let inset = sweep(SweepParameter::EchoRatio, &range(0.0, 3.0, 0.25), |e| {
        Point::new(Protocol::SpinorEcho, n, tw, e).fixed_theta(theta).noise(NoiseSpec::CssLevel)
    });
    let inset = r.run(&inset)?;
    Ok(vec![rows("fig7a", a), rows("fig7b", b), rows("fig7b_inset", inset)])
}

/// TACT QFI against twisting strength for N ∈ {10², 10³, 10⁴} with the
/// one-mode reference, plus the located maxima.
fn fig8(r: &mut Runner) -> Result<Vec<Panel>, RecipeError> {
    let max_n = r.opts.max_n.unwrap_or(10_000);
    let sizes: Vec<usize> = [100, 1000, 10_000].into_iter().filter(|&n| n <= max_n).collect();
    if sizes.is_empty() {
        return Err(RecipeError::Empty(format!("no atom number in the recipe is <= {max_n}")));
    }
    let mut points = Vec::new();
    let mut records = Vec::new();
    for &n in &sizes {
        let opt = optimal_twisting(SpinSystem::new(n)?)?;
        let grid: Vec<f64> = linspace(0.02, 2.0, 100).into_iter().map(|x| x * opt.seed).collect();
        for p in [Protocol::QfiScan, Protocol::OneMode] {
            points.extend(sweep(SweepParameter::TChi, &grid, |t| {
                Point::new(p, n, Twisting::TChi(t), 1.0).fixed_theta(0.0)
            }));
        }
        records.push(
            [
                n as f64,
                opt.seed,
                opt.t_chi,
                opt.t_chi / opt.seed,
                opt.qfi,
                opt.qfi / twin_fock_qfi(n),
            ]
            .iter()
            .enumerate()
            .map(|(i, &x)| if i == 0 { n.to_string() } else { crate::run::format_float(x) })
            .collect(),
        );
    }
    let scan = r.run(&points)?;
    Ok(vec![
        rows("fig8", scan),
        Panel {
            file: "fig8_peaks.csv".into(),
            table: Table::Summary {
                header: ["n_atoms", "t_chi_seed", "t_chi_opt", "t_chi_opt_over_seed", "qfi_max", "qfi_max_over_twin_fock"]
                    .map(String::from)
                    .to_vec(),
                records,
            },
        },
    ])
}

pub fn build(recipe: Recipe, opts: RecipeOptions) -> Result<RecipeOutput, RecipeError> {
    let mut runner = Runner {
        opts,
        all: Batch {
            rows: Vec::new(),
            errors: Vec::new(),
        },
    };
    let panels = match recipe {
        Recipe::Fig3 => fig3(&mut runner)?,
        Recipe::Fig4 => fig4(&mut runner)?,
        Recipe::Fig5 => fig5(&mut runner)?,
        Recipe::Fig6 => fig6(&mut runner)?,
        Recipe::Fig7 => fig7(&mut runner)?,
        Recipe::Fig8 => fig8(&mut runner)?,
    };
    Ok(RecipeOutput {
        panels,
        batch: runner.all,
    })
}
