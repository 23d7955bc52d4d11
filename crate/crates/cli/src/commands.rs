use std::fmt::Write as _;
use std::str::FromStr;
use std::sync::Arc;

use clap::Args;
use rayon::prelude::*;
use serde_json::json;

use cir_chaos::chaos::{CirChaos, MAX_MARKED_POINTS};
use cir_chaos::expquad::oracle_crosscheck;
use cir_chaos::model::{cir_kernel_row_integral, cir_kernel_value, embed_cir, CirParams};
use cir_chaos::montecarlo::{path_dump, path_dump_csv, Scheme, SimConfig};
use cir_chaos::operator::{discretize_subtracted, spectrum_csv, QuadratureGrid, QuadratureRule, DEFAULT_NODES};
use cir_chaos::pricing::{
    bond_price_operator, bond_price_riccati_closed, bond_price_riccati_ode, operator_beta_alpha, price as quote,
    riccati_closed, PricingMethod,
};
use cir_chaos::validation::{run_all, ValidationConfig};

use crate::config::{layer, FileConfig, TaskSection};
use crate::{CliError, CommonArgs, Outcome};

const DEFAULT_A: f64 = 0.5;
const DEFAULT_B: f64 = 0.04;
const DEFAULT_C: f64 = 0.2;
const DEFAULT_R0: f64 = 0.04;
const DEFAULT_PATHS: usize = 10_000;
const DEFAULT_DUMP_PATHS: usize = 10;
const DEFAULT_DT: f64 = 1e-3;
const DEFAULT_SEED: u64 = 42;
const DEFAULT_MATURITIES: [f64; 6] = [1.0, 2.0, 3.0, 5.0, 7.0, 10.0];
const DEFAULT_EXPQUAD_SAMPLES: usize = 100_000;
const MAX_CHAOS_ORDER: usize = MAX_MARKED_POINTS - 1;
const MAX_CHAOS_ROWS: usize = 10_000;

pub struct Context {
    common: CommonArgs,
    file: FileConfig,
}

impl Context {
    pub fn new(common: &CommonArgs, file: FileConfig) -> Self {
        Self {
            common: common.clone(),
            file,
        }
    }

    fn task(&self) -> &TaskSection {
        &self.file.task
    }

    fn params(&self) -> Result<CirParams, CliError> {
        let (c, m) = (&self.common, &self.file.model);
        Ok(CirParams::new(
            layer(c.a, m.a, DEFAULT_A),
            layer(c.b, m.b, DEFAULT_B),
            layer(c.c, m.c, DEFAULT_C),
            layer(c.lambda_bar, m.lambda_bar, 0.0),
            layer(c.r0, m.r0, DEFAULT_R0),
        )?)
    }

    fn nodes(&self) -> usize {
        layer(self.common.nodes, self.file.grid.nodes, DEFAULT_NODES)
    }

    fn rule(&self) -> Result<QuadratureRule, CliError> {
        let name = layer(self.common.rule.clone(), self.file.grid.rule.clone(), "gauss_legendre".into());
        Ok(QuadratureRule::from_str(&name)?)
    }

    fn seed(&self) -> u64 {
        layer(self.common.seed, self.file.mc.seed, DEFAULT_SEED)
    }

    fn sim(&self, default_paths: usize, horizon: f64) -> Result<SimConfig, CliError> {
        let (c, m) = (&self.common, &self.file.mc);
        Ok(SimConfig::new(
            layer(c.n_paths, m.n_paths, default_paths),
            layer(c.dt, m.dt, DEFAULT_DT),
            horizon,
            self.seed(),
            Scheme::OuExact,
        )?)
    }
}

fn json_text(value: &impl serde::Serialize) -> Result<String, CliError> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::failure("OutputError", e.to_string()))?;
    s.push('\n');
    Ok(s)
}

fn ok(text: String) -> Result<Outcome, CliError> {
    Ok(Outcome { text, ok: true })
}

#[derive(Debug, Args)]
pub struct PriceArgs {
    /// Valuation time.
    #[arg(long)]
    t: Option<f64>,
    /// Maturity.
    #[arg(long = "T")]
    maturity: Option<f64>,
    /// Short rate at the valuation time (defaults to r0).
    #[arg(long)]
    r_t: Option<f64>,
    /// operator, riccati (closed form), riccati_ode, mc or all.
    #[arg(long)]
    method: Option<String>,
}

enum MethodChoice {
    One(PricingMethod),
    All,
}

fn parse_method(name: &str) -> Result<MethodChoice, CliError> {
    Ok(match name {
        "all" => MethodChoice::All,
        "riccati" => MethodChoice::One(PricingMethod::RiccatiClosed),
        other => MethodChoice::One(PricingMethod::from_str(other)?),
    })
}

fn rel_diff(x: f64, y: f64) -> f64 {
    (x - y).abs() / y.abs()
}

pub fn price(ctx: &Context, args: &PriceArgs) -> Result<Outcome, CliError> {
    let task = ctx.task();
    let p = ctx.params()?;
    let t = layer(args.t, task.t, 0.0);
    let maturity = layer(args.maturity, task.maturity, 1.0);
    let r_t = layer(args.r_t, task.r_t, p.r0);
    let method = parse_method(&layer(args.method.clone(), task.method.clone(), "operator".into()))?;
    match method {
        MethodChoice::One(PricingMethod::Operator) => json_text(&bond_price_operator(&p, t, maturity, r_t, ctx.nodes())?),
        MethodChoice::One(PricingMethod::Mc) => {
            let cfg = ctx.sim(DEFAULT_PATHS, maturity - t)?;
            json_text(&quote(&p, t, maturity, r_t, PricingMethod::Mc, ctx.nodes(), Some(&cfg))?)
        }
        MethodChoice::One(m) => json_text(&quote(&p, t, maturity, r_t, m, ctx.nodes(), None)?),
        MethodChoice::All => {
            let op = bond_price_operator(&p, t, maturity, r_t, ctx.nodes())?;
            let closed = bond_price_riccati_closed(&p, t, maturity, r_t)?;
            let ode = bond_price_riccati_ode(&p, t, maturity, r_t)?;
            json_text(&json!({
                "operator": op,
                "riccati_closed": closed,
                "riccati_ode": ode,
                "rel_err": {
                    "operator_vs_riccati_closed": rel_diff(op.price, closed.price),
                    "operator_vs_riccati_ode": rel_diff(op.price, ode.price),
                    "riccati_closed_vs_riccati_ode": rel_diff(closed.price, ode.price),
                },
            }))
        }
    }
    .and_then(ok)
}

#[derive(Debug, Args)]
pub struct CurveArgs {
    #[arg(long)]
    t: Option<f64>,
    #[arg(long)]
    r_t: Option<f64>,
    /// Comma-separated increasing maturities.
    #[arg(long, value_delimiter = ',')]
    maturities: Option<Vec<f64>>,
}

pub fn curve(ctx: &Context, args: &CurveArgs) -> Result<Outcome, CliError> {
    let task = ctx.task();
    let p = ctx.params()?;
    let t = layer(args.t, task.t, 0.0);
    let r_t = layer(args.r_t, task.r_t, p.r0);
    let maturities = layer(args.maturities.clone(), task.maturities.clone(), DEFAULT_MATURITIES.to_vec());
    if maturities.is_empty() {
        return Err(CliError::input("InvalidParameter", "maturity list is empty"));
    }
    if maturities.windows(2).any(|w| w[0] >= w[1]) {
        return Err(CliError::input("InvalidParameter", "maturities must be strictly increasing"));
    }
    let nodes = ctx.nodes();
    let rows: Vec<String> = maturities
        .par_iter()
        .map(|&m| -> Result<String, CliError> {
            let (beta, alpha) = operator_beta_alpha(&p, t, m, nodes)?;
            let op = (-beta * r_t - alpha).exp();
            let (beta_cf, alpha_cf) = riccati_closed(p.a, p.b, p.c, m - t);
            let closed = (-beta_cf * r_t - alpha_cf).exp();
            let yield_rate = -op.ln() / (m - t);
            Ok(format!("{m},{op},{closed},{},{beta},{alpha},{yield_rate}\n", rel_diff(op, closed)))
        })
        .collect::<Result<_, _>>()?;
    let mut text = String::from("maturity,price_operator,price_riccati,rel_err,beta,alpha,yield\n");
    rows.iter().for_each(|r| text.push_str(r));
    ok(text)
}

#[derive(Debug, Args)]
pub struct ChaosArgs {
    /// Chaos order n (odd orders are nonzero).
    #[arg(long)]
    order: Option<usize>,
    /// Horizon T.
    #[arg(long = "T")]
    horizon: Option<f64>,
    /// Time points; all non-decreasing n-tuples of them are evaluated.
    #[arg(long, value_delimiter = ',')]
    times: Option<Vec<f64>>,
    /// An explicit comma-separated n-tuple; may be repeated.
    #[arg(long = "tuple")]
    tuples: Vec<String>,
}

fn parse_list(s: &str) -> Result<Vec<f64>, CliError> {
    s.split(',')
        .filter(|x| !x.trim().is_empty())
        .map(|x| {
            x.trim()
                .parse::<f64>()
                .map_err(|e| CliError::input("InvalidParameter", format!("cannot parse `{x}`: {e}")))
        })
        .collect()
}

/// Non-decreasing `order`-tuples over `points` (indices into the sorted list).
fn tuples_with_replacement(points: &[f64], order: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    let mut idx = vec![0usize; order];
    if points.is_empty() {
        return out;
    }
    loop {
        out.push(idx.iter().map(|&i| points[i]).collect());
        let Some(pos) = (0..order).rev().find(|&k| idx[k] + 1 < points.len()) else {
            return out;
        };
        let next = idx[pos] + 1;
        idx[pos..].iter_mut().for_each(|i| *i = next);
        if out.len() > MAX_CHAOS_ROWS {
            return out;
        }
    }
}

pub fn chaos(ctx: &Context, args: &ChaosArgs) -> Result<Outcome, CliError> {
    let task = ctx.task();
    let p = ctx.params()?;
    let order = layer(args.order, task.order, 1);
    if order == 0 || order > MAX_CHAOS_ORDER {
        return Err(CliError::input("InvalidParameter", format!("order must lie in 1..={MAX_CHAOS_ORDER}, got {order}")));
    }
    let horizon = layer(args.horizon, task.maturity, 1.0);
    let tuples: Vec<Vec<f64>> = if !args.tuples.is_empty() {
        args.tuples.iter().map(|s| parse_list(s)).collect::<Result<_, _>>()?
    } else if let Some(t) = task.tuples.clone().filter(|_| args.times.is_none()) {
        t
    } else {
        let mut points = layer(
            args.times.clone(),
            task.times.clone(),
            (0..10).map(|k| (k as f64 + 0.5) / 10.0 * horizon).collect(),
        );
        points.sort_by(f64::total_cmp);
        points.dedup();
        tuples_with_replacement(&points, order)
    };
    if tuples.is_empty() {
        return Err(CliError::input("InvalidParameter", "no time tuples to evaluate"));
    }
    if tuples.len() > MAX_CHAOS_ROWS {
        return Err(CliError::input("InvalidParameter", format!("more than {MAX_CHAOS_ROWS} tuples requested")));
    }
    if let Some(bad) = tuples.iter().find(|t| t.len() != order) {
        return Err(CliError::input(
            "InvalidParameter",
            format!("tuple {bad:?} has {} entries, expected {order}", bad.len()),
        ));
    }
    let engine = CirChaos::new(&p, horizon, ctx.nodes())?;
    if order % 2 == 0 {
        eprintln!("note: chaos coefficients of even order vanish; every value below is zero");
    }
    let values: Vec<f64> = tuples.par_iter().map(|t| engine.coefficient(t)).collect::<Result<_, _>>()?;
    let mut text = (1..=order).map(|k| format!("t{k},")).collect::<String>();
    text.push_str("f_value\n");
    for (t, v) in tuples.iter().zip(values) {
        for x in t {
            let _ = write!(text, "{x},");
        }
        let _ = writeln!(text, "{v}");
    }
    ok(text)
}

#[derive(Debug, Args)]
pub struct ExpquadArgs {
    /// Modes as `b:c` pairs separated by commas, e.g. `0:1,0.5:-0.3`.
    #[arg(long, allow_hyphen_values = true)]
    modes: Option<String>,
    /// Monte Carlo sample count.
    #[arg(long)]
    samples: Option<usize>,
}

fn parse_modes(s: &str) -> Result<Vec<(f64, f64)>, CliError> {
    s.split(',')
        .filter(|x| !x.trim().is_empty())
        .map(|pair| {
            let (b, c) = pair
                .split_once(':')
                .ok_or_else(|| CliError::input("InvalidParameter", format!("mode `{pair}` is not of the form b:c")))?;
            let num = |x: &str| {
                x.trim()
                    .parse::<f64>()
                    .map_err(|e| CliError::input("InvalidParameter", format!("cannot parse `{x}`: {e}")))
            };
            Ok((num(b)?, num(c)?))
        })
        .collect()
}

pub fn expquad(ctx: &Context, args: &ExpquadArgs) -> Result<Outcome, CliError> {
    let task = ctx.task();
    let modes = match &args.modes {
        Some(s) => parse_modes(s)?,
        None => task.modes.clone().unwrap_or_else(|| vec![(0.0, 1.0)]),
    };
    let samples = layer(args.samples, task.samples, DEFAULT_EXPQUAD_SAMPLES);
    let grid = QuadratureGrid::gauss_legendre(ctx.nodes(), 0.0, 1.0)?;
    let cc = oracle_crosscheck(&modes, &grid, samples, ctx.seed())?;
    json_text(&json!({
        "analytic": cc.analytic,
        "operator": cc.operator_path,
        "mc_mean": cc.mc.mean,
        "mc_stderr": cc.mc.stderr,
    }))
    .and_then(ok)
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// Reduced Monte Carlo sample sizes.
    #[arg(long)]
    fast: bool,
}

pub fn validate(ctx: &Context, args: &ValidateArgs) -> Result<Outcome, CliError> {
    let fast = args.fast || ctx.task().fast.unwrap_or(false);
    let base = if fast { ValidationConfig::fast() } else { ValidationConfig::full() };
    let cfg = ValidationConfig {
        seed: layer(ctx.common.seed, ctx.file.mc.seed, base.seed),
        ..base
    };
    let reports = run_all(&cfg);
    let mut text = String::new();
    for r in &reports {
        let _ = writeln!(text, "{}", r.line());
    }
    let passed = reports.iter().filter(|r| r.passed).count();
    let _ = writeln!(text, "{passed} of {} checks passed", reports.len());
    Ok(Outcome {
        text,
        ok: passed == reports.len(),
    })
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Horizon T.
    #[arg(long = "T")]
    horizon: Option<f64>,
}

pub fn simulate(ctx: &Context, args: &SimulateArgs) -> Result<Outcome, CliError> {
    let p = ctx.params()?;
    let horizon = layer(args.horizon, ctx.task().maturity, 1.0);
    let cfg = ctx.sim(DEFAULT_DUMP_PATHS, horizon)?;
    ok(path_dump_csv(&path_dump(&embed_cir(&p)?, &cfg)?))
}

#[derive(Debug, Args)]
pub struct SpectrumArgs {
    #[arg(long)]
    t: Option<f64>,
    #[arg(long = "T")]
    maturity: Option<f64>,
}

pub fn spectrum(ctx: &Context, args: &SpectrumArgs) -> Result<Outcome, CliError> {
    let p = ctx.params()?;
    let t = layer(args.t, ctx.task().t, 0.0);
    let maturity = layer(args.maturity, ctx.task().maturity, 1.0);
    if !(t < maturity) {
        return Err(cir_chaos::Error::InvalidTimeOrder { s: maturity, t }.into());
    }
    let grid = QuadratureGrid::new(ctx.rule()?, ctx.nodes(), t, maturity)?;
    let (a, c, lb) = (p.a, p.c, p.lambda_bar);
    let d = discretize_subtracted(
        move |s1, s2| cir_kernel_value(a, c, lb, maturity, s1, s2),
        &grid,
        Some(Arc::new(move |s| cir_kernel_row_integral(a, c, lb, maturity, t, s))),
    )?;
    ok(spectrum_csv(&d))
}
