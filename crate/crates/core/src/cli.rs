//! Command-line front end. Every subcommand writes CSV preceded by `#`
//! comment lines that echo the fully resolved settings.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::estimators::{cc_estimate, cc_estimate_with_offset, RegressionSample};
use crate::kernels::{reference_table_kernels, KernelFamily, KernelSpec};
use crate::scenario::{sinusoid_scenario, Scenario};
use crate::selection::{EstimatorRule, Method, Objective, Problem, RuleId};
use crate::sim::{run_with_rules, SimConfig};
use crate::vtheory::{interval_l, v_extremes, VCurve, VOptions};

/// Exit code for an infeasible verdict.
pub const EXIT_INFEASIBLE: i32 = 2;
/// Exit code for any error, including usage errors.
pub const EXIT_ERROR: i32 = 1;

/// Every key accepted in a config file.
pub const CONFIG_KEYS: &[&str] = &[
    "seed",
    "grid-step",
    "tail-window",
    "lambda-cap",
    "kernel",
    "kernels",
    "lambda-max",
    "step",
    "k",
    "sigma-offset",
    "sigma-slope",
    "n",
    "M",
    "rules",
    "rule",
    "trim",
    "h",
    "lambda",
    "grid",
    "data",
    "dump-variances",
    "family",
    "a0",
    "a1",
];

#[derive(Debug, Parser)]
#[command(name = "vslocreg", version, about = "Variance-stabilized local linear regression")]
struct Cli {
    /// Write CSV here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Evaluation grid step on the scenario domain.
    #[arg(long, global = true)]
    grid_step: Option<f64>,
    /// File of `key = value` lines; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Half-width of the integration window for unbounded kernels, or `none`.
    #[arg(long, global = true)]
    tail_window: Option<String>,
    /// Largest lambda returned by the V root solver.
    #[arg(long, global = true)]
    lambda_cap: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// V(λ) extremes and moments for a list of kernels.
    KernelTable {
        /// Comma-separated kernel ids; defaults to the reference set.
        #[arg(long)]
        kernels: Option<String>,
    },
    /// V(λ) sampled on a regular grid.
    Vcurve {
        #[arg(long)]
        kernel: Option<String>,
        #[arg(long)]
        lambda_max: Option<f64>,
        #[arg(long)]
        step: Option<f64>,
    },
    /// Whether stabilization by local weighting is possible. Exit code 2 when not.
    Feasibility {
        #[arg(long)]
        kernel: Option<String>,
        #[command(flatten)]
        scenario: ScenarioArgs,
    },
    /// Per-point gamma, lambda, l and bandwidth of one rule.
    Profiles {
        #[arg(long)]
        rule: Option<String>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        kernel: Option<String>,
        #[command(flatten)]
        scenario: ScenarioArgs,
    },
    /// Bandwidth, weight, zeta and AMISE for each rule.
    Bandwidths {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        rules: Option<String>,
        #[arg(long)]
        kernel: Option<String>,
        #[command(flatten)]
        scenario: ScenarioArgs,
    },
    /// Fits the convex-combination estimator to a two-column (x,y) CSV.
    Fit {
        #[arg(long)]
        data: Option<PathBuf>,
        /// Take bandwidth and weight profiles from a rule on the scenario grid.
        #[arg(long, conflicts_with_all = ["h", "lambda", "grid"])]
        rule: Option<String>,
        #[arg(long)]
        h: Option<f64>,
        #[arg(long)]
        lambda: Option<f64>,
        /// Evaluation grid as `lo:hi:step`.
        #[arg(long)]
        grid: Option<String>,
        #[arg(long)]
        kernel: Option<String>,
        #[command(flatten)]
        scenario: ScenarioArgs,
    },
    /// Monte Carlo comparison of rules.
    Simulate {
        #[arg(long)]
        n: Option<usize>,
        /// Number of replications.
        #[arg(long = "M")]
        m: Option<usize>,
        #[arg(long)]
        rules: Option<String>,
        #[arg(long)]
        kernel: Option<String>,
        /// Comma-separated trimming levels.
        #[arg(long)]
        trim: Option<String>,
        /// Also write the per-point variance profiles here.
        #[arg(long)]
        dump_variances: Option<PathBuf>,
        #[command(flatten)]
        scenario: ScenarioArgs,
    },
    /// Searches the vs kernel family for the largest V ratio.
    KernelOpt {
        #[arg(long)]
        family: Option<String>,
        /// Coarse grid size as `<n0>x<n1>`.
        #[arg(long)]
        grid: Option<String>,
        /// Bounds for a0 as `lo:hi`.
        #[arg(long)]
        a0: Option<String>,
        /// Bounds for a1 as `lo:hi`.
        #[arg(long)]
        a1: Option<String>,
    },
}

#[derive(Debug, Args)]
struct ScenarioArgs {
    /// Frequency index of the regression function (1, 2 or 3).
    #[arg(long)]
    k: Option<u32>,
    #[arg(long)]
    sigma_offset: Option<f64>,
    #[arg(long)]
    sigma_slope: Option<f64>,
}

/// Resolved `key = value` settings: command line over config file over defaults.
#[derive(Debug, Clone)]
pub struct Settings {
    command: &'static str,
    order: Vec<&'static str>,
    values: BTreeMap<&'static str, String>,
}

impl Settings {
    /// `keys` lists the settings this command reads, each with an optional default.
    pub fn resolve(
        command: &'static str,
        keys: &[(&'static str, Option<&str>)],
        file: &BTreeMap<String, String>,
        cli: &[(&'static str, Option<String>)],
    ) -> Self {
        let mut values = BTreeMap::new();
        for &(key, default) in keys {
            let from_cli = cli.iter().find(|(k, _)| *k == key).and_then(|(_, v)| v.clone());
            let value = from_cli
                .or_else(|| file.get(key).cloned())
                .or_else(|| default.map(str::to_string));
            if let Some(v) = value {
                values.insert(key, v);
            }
        }
        Settings {
            command,
            order: keys.iter().map(|k| k.0).collect(),
            values,
        }
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self
            .raw(key)
            .ok_or_else(|| Error::Config(format!("missing required setting `{key}`")))?;
        raw.trim()
            .parse()
            .map_err(|_| Error::Config(format!("invalid value `{raw}` for `{key}`")))
    }

    pub fn get_opt<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.raw(key) {
            None => Ok(None),
            Some(_) => self.get(key).map(Some),
        }
    }

    /// `# vslocreg <command>` followed by one `# key = value` line per setting.
    pub fn header(&self) -> String {
        let mut s = format!("# vslocreg {}\n", self.command);
        for key in &self.order {
            if let Some(v) = self.values.get(key) {
                let _ = writeln!(s, "# {key} = {v}");
            }
        }
        s
    }
}

/// Parses `key = value` lines. Blank lines and `#` comments are skipped.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", no + 1)))?;
        let key = key.trim();
        if !CONFIG_KEYS.contains(&key) {
            return Err(Error::Config(format!(
                "line {}: unknown key `{key}`; valid keys: {}",
                no + 1,
                CONFIG_KEYS.join(", ")
            )));
        }
        map.insert(key.to_string(), value.trim().to_string());
    }
    Ok(map)
}

/// Runs the CLI on `args` (including the program name) and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_ERROR } else { 0 };
        }
    };
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            EXIT_ERROR
        }
    }
}

pub fn main() -> i32 {
    run(std::env::args_os())
}

fn s<T: ToString>(v: &Option<T>) -> Option<String> {
    v.as_ref().map(ToString::to_string)
}

const SCENARIO_KEYS: [(&str, Option<&str>); 4] = [
    ("k", Some("1")),
    ("sigma-offset", Some("2.5")),
    ("sigma-slope", Some("1")),
    ("grid-step", Some("0.001")),
];

const CURVE_KEYS: [(&str, Option<&str>); 2] = [("tail-window", Some("6")), ("lambda-cap", Some("1e8"))];

fn dispatch(cli: &Cli) -> Result<i32> {
    let file = match &cli.config {
        Some(path) => parse_config(&read_text(path)?)?,
        None => BTreeMap::new(),
    };
    let mut common = vec![
        ("seed", s(&cli.seed)),
        ("grid-step", s(&cli.grid_step)),
        ("tail-window", cli.tail_window.clone()),
        ("lambda-cap", s(&cli.lambda_cap)),
    ];
    let scen = |a: &ScenarioArgs| {
        vec![
            ("k", s(&a.k)),
            ("sigma-offset", s(&a.sigma_offset)),
            ("sigma-slope", s(&a.sigma_slope)),
        ]
    };
    let out = cli.out.as_deref();
    match &cli.command {
        Command::KernelTable { kernels } => {
            common.push(("kernels", kernels.clone()));
            let keys = [&[("kernels", None)][..], &CURVE_KEYS[..]].concat();
            let st = Settings::resolve("kernel-table", &keys, &file, &common);
            emit(out, &kernel_table(&st)?)?;
            Ok(0)
        }
        Command::Vcurve { kernel, lambda_max, step } => {
            common.extend([("kernel", kernel.clone()), ("lambda-max", s(lambda_max)), ("step", s(step))]);
            let keys = [
                &[("kernel", Some("gaussian")), ("lambda-max", Some("10")), ("step", Some("0.01"))][..],
                &CURVE_KEYS[..],
            ]
            .concat();
            let st = Settings::resolve("vcurve", &keys, &file, &common);
            emit(out, &vcurve(&st)?)?;
            Ok(0)
        }
        Command::Feasibility { kernel, scenario } => {
            common.push(("kernel", kernel.clone()));
            common.extend(scen(scenario));
            let keys = [&[("kernel", Some("gaussian"))][..], &SCENARIO_KEYS[..], &CURVE_KEYS[..]].concat();
            let st = Settings::resolve("feasibility", &keys, &file, &common);
            let (text, feasible) = feasibility(&st)?;
            emit(out, &text)?;
            Ok(if feasible { 0 } else { EXIT_INFEASIBLE })
        }
        Command::Profiles { rule, n, kernel, scenario } => {
            common.extend([("rule", rule.clone()), ("n", s(n)), ("kernel", kernel.clone())]);
            common.extend(scen(scenario));
            let keys = [
                &[("rule", None), ("n", Some("100")), ("kernel", Some("gaussian"))][..],
                &SCENARIO_KEYS[..],
                &CURVE_KEYS[..],
            ]
            .concat();
            let st = Settings::resolve("profiles", &keys, &file, &common);
            emit(out, &profiles(&st)?)?;
            Ok(0)
        }
        Command::Bandwidths { n, rules, kernel, scenario } => {
            common.extend([("n", s(n)), ("rules", rules.clone()), ("kernel", kernel.clone())]);
            common.extend(scen(scenario));
            let keys = [
                &[("n", Some("100")), ("rules", Some("a,b,c,d,e,f,g,h")), ("kernel", Some("gaussian"))][..],
                &SCENARIO_KEYS[..],
                &CURVE_KEYS[..],
            ]
            .concat();
            let st = Settings::resolve("bandwidths", &keys, &file, &common);
            emit(out, &bandwidths(&st)?)?;
            Ok(0)
        }
        Command::Fit { data, rule, h, lambda, grid, kernel, scenario } => {
            common.extend([
                ("data", data.as_ref().map(|p| p.display().to_string())),
                ("rule", rule.clone()),
                ("h", s(h)),
                ("lambda", s(lambda)),
                ("grid", grid.clone()),
                ("kernel", kernel.clone()),
            ]);
            common.extend(scen(scenario));
            let by_rule = rule.is_some() || (file.contains_key("rule") && h.is_none() && lambda.is_none());
            let mut keys = vec![("data", None), ("kernel", Some("gaussian"))];
            if by_rule {
                keys.push(("rule", None));
                keys.extend(SCENARIO_KEYS);
                keys.extend(CURVE_KEYS);
            } else {
                keys.extend([("h", None), ("lambda", None), ("grid", Some("0:1:0.01"))]);
            }
            let st = Settings::resolve("fit", &keys, &file, &common);
            let (text, failed) = fit(&st, by_rule)?;
            emit(out, &text)?;
            if failed > 0 {
                eprintln!("{failed} grid points could not be fitted");
            }
            Ok(0)
        }
        Command::Simulate { n, m, rules, kernel, trim, dump_variances, scenario } => {
            common.extend([
                ("n", s(n)),
                ("M", s(m)),
                ("rules", rules.clone()),
                ("kernel", kernel.clone()),
                ("trim", trim.clone()),
                ("dump-variances", dump_variances.as_ref().map(|p| p.display().to_string())),
            ]);
            common.extend(scen(scenario));
            let keys = [
                &[
                    ("n", Some("1000")),
                    ("M", Some("100")),
                    ("seed", Some("1")),
                    ("rules", Some("a,b,c,d,e,f,g,h")),
                    ("kernel", Some("gaussian")),
                    ("trim", Some("0,0.05,0.1,0.15")),
                    ("dump-variances", None),
                ][..],
                &SCENARIO_KEYS[..],
                &CURVE_KEYS[..],
            ]
            .concat();
            let st = Settings::resolve("simulate", &keys, &file, &common);
            simulate(&st, out)?;
            Ok(0)
        }
        Command::KernelOpt { family, grid, a0, a1 } => {
            common.extend([
                ("family", family.clone()),
                ("grid", grid.clone()),
                ("a0", a0.clone()),
                ("a1", a1.clone()),
            ]);
            let keys = [
                &[("family", Some("vs")), ("grid", Some("11x11")), ("a0", Some("0:0.5")), ("a1", Some("0.5:12"))][..],
                &CURVE_KEYS[..],
            ]
            .concat();
            let st = Settings::resolve("kernel-opt", &keys, &file, &common);
            emit(out, &kernel_opt(&st)?)?;
            Ok(0)
        }
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => {
            std::fs::write(path, text).map_err(|e| Error::Config(format!("cannot write {}: {e}", path.display())))
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn curve_options(st: &Settings) -> Result<VOptions> {
    let tail_window = match st.raw("tail-window").map(str::trim) {
        None => VOptions::default().tail_window,
        Some("none") => None,
        Some(_) => Some(st.get("tail-window")?),
    };
    Ok(VOptions {
        tail_window,
        lambda_cap: st.get_opt("lambda-cap")?.unwrap_or(VOptions::default().lambda_cap),
    })
}

fn scenario(st: &Settings) -> Result<Scenario> {
    sinusoid_scenario(st.get("k")?, st.get("sigma-offset")?, st.get("sigma-slope")?)?.with_grid_step(st.get("grid-step")?)
}

fn kernel(st: &Settings) -> Result<KernelSpec> {
    st.get::<String>("kernel")?.parse()
}

fn opt_num(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn kernel_table(st: &Settings) -> Result<String> {
    let kernels = match st.raw("kernels") {
        Some(list) if !list.trim().is_empty() => list
            .split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(str::parse)
            .collect::<Result<Vec<KernelSpec>>>()?,
        _ => reference_table_kernels(),
    };
    let opts = curve_options(st)?;
    let mut out = st.header();
    out.push_str("kernel,kappa2,kappa4,v_min,v_sup,argmin,range,ratio\n");
    for k in &kernels {
        let e = v_extremes(k, opts)?;
        let ints = k.integrals();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            k.id(),
            ints.kappa2,
            ints.kappa4,
            e.v_min,
            e.v_sup,
            e.lambda_min,
            e.v_sup - e.v_min,
            e.ratio()
        );
    }
    Ok(out)
}

fn vcurve(st: &Settings) -> Result<String> {
    let curve = VCurve::with_options(&kernel(st)?, curve_options(st)?)?;
    let mut out = st.header();
    let _ = writeln!(out, "# lambda_min = {}", curve.lambda_min());
    let _ = writeln!(out, "# v_min = {}", curve.v_min());
    let _ = writeln!(out, "# v_sup = {}", curve.v_sup());
    out.push_str("lambda,V\n");
    for (l, v) in curve.tabulate(st.get("lambda-max")?, st.get("step")?)? {
        let _ = writeln!(out, "{l},{v}");
    }
    Ok(out)
}

fn feasibility(st: &Settings) -> Result<(String, bool)> {
    let sc = scenario(st)?;
    let curve = VCurve::with_options(&kernel(st)?, curve_options(st)?)?;
    let g = sc.gamma_profile();
    let verdict = curve.feasibility(g.gamma_max, g.gamma_min)?;
    let mut out = st.header();
    out.push_str("kernel,gamma_max,gamma_min,gamma_ratio,v_min,v_sup,v_ratio,feasible,zeta_lo,zeta_hi\n");
    let (lo, hi) = verdict.zeta_range.map_or((None, None), |(a, b)| (Some(a), Some(b)));
    let _ = writeln!(
        out,
        "{},{},{},{},{},{},{},{},{},{}",
        curve.kernel().id(),
        g.gamma_max,
        g.gamma_min,
        verdict.gamma_ratio,
        curve.v_min(),
        curve.v_sup(),
        verdict.v_ratio,
        verdict.feasible,
        opt_num(lo),
        opt_num(hi)
    );
    eprintln!(
        "gamma ratio {:.4} {} V ratio {:.4}: stabilization by weighting is {}",
        verdict.gamma_ratio,
        if verdict.feasible { "<=" } else { ">" },
        verdict.v_ratio,
        if verdict.feasible { "feasible" } else { "infeasible; use a variable bandwidth rule (b or f)" }
    );
    Ok((out, verdict.feasible))
}

fn method_name(m: Method) -> &'static str {
    match m {
        Method::VsWeighting => "vs-weighting",
        Method::VsBandwidth => "vs-bandwidth",
        Method::Fixed => "fixed",
        Method::MseLocal => "mse-local",
    }
}

fn objective_name(o: Objective) -> &'static str {
    match o {
        Objective::Var => "var",
        Objective::Mise => "mise",
    }
}

fn build_rules(st: &Settings, ids: &[RuleId], n: usize) -> Result<(Scenario, VCurve, Vec<EstimatorRule>)> {
    let sc = scenario(st)?;
    let curve = VCurve::with_options(&kernel(st)?, curve_options(st)?)?;
    let problem = Problem::new(&sc, &curve)?;
    let rules = ids.iter().map(|&id| problem.build(id, n)).collect::<Result<Vec<_>>>()?;
    Ok((sc, curve, rules))
}

fn profiles(st: &Settings) -> Result<String> {
    let id: RuleId = st.get::<String>("rule")?.parse()?;
    let (sc, curve, rules) = build_rules(st, &[id], st.get("n")?)?;
    let rule = &rules[0];
    let kappa2 = curve.kernel().integrals().kappa2;
    let mut out = st.header();
    let _ = writeln!(out, "# clamped = {}", rule.clamped.len());
    let _ = writeln!(out, "# boundary_weights = {}", rule.boundary_weights.len());
    out.push_str("x,gamma,lambda,l,h\n");
    for (i, &x) in rule.xs.iter().enumerate() {
        let lambda = rule.weight.at(i);
        let _ = writeln!(
            out,
            "{x},{},{lambda},{},{}",
            sc.gamma(x),
            interval_l(kappa2, lambda)?,
            rule.bandwidth.at(i)
        );
    }
    Ok(out)
}

fn rule_summary(rule: &EstimatorRule) -> String {
    let (h0, h1) = rule.bandwidth.min_max();
    let (l0, l1) = rule.weight.min_max();
    format!(
        "{},{},{},{},{},{},{},{},{},{},{}",
        rule.id,
        method_name(rule.id.method()),
        objective_name(rule.id.objective()),
        opt_num(rule.table_bandwidth),
        h0,
        h1,
        opt_num(rule.weight.constant()),
        l0,
        l1,
        opt_num(rule.zeta),
        rule.amise
    )
}

const RULE_COLUMNS: &str = "rule,method,objective,h,h_min,h_max,lambda,lambda_min,lambda_max,zeta,amise";

fn bandwidths(st: &Settings) -> Result<String> {
    let ids = RuleId::parse_list(&st.get::<String>("rules")?)?;
    let (_, _, rules) = build_rules(st, &ids, st.get("n")?)?;
    let mut out = st.header();
    out.push_str(RULE_COLUMNS);
    out.push('\n');
    for rule in &rules {
        out.push_str(&rule_summary(rule));
        out.push('\n');
    }
    Ok(out)
}

/// Reads `x,y` rows. Blank lines, `#` comments and one leading non-numeric
/// header row are skipped.
pub fn read_xy(text: &str) -> Result<RegressionSample> {
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for (no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut cells = line.split(',').map(str::trim);
        let (a, b) = (cells.next().unwrap_or(""), cells.next().unwrap_or(""));
        match (a.parse::<f64>(), b.parse::<f64>()) {
            (Ok(x), Ok(y)) => {
                xs.push(x);
                ys.push(y);
            }
            _ if xs.is_empty() && !line.chars().next().is_some_and(|c| c.is_ascii_digit() || c == '-' || c == '.') => {}
            _ => return Err(Error::Config(format!("data line {}: expected two numbers, got `{line}`", no + 1))),
        }
    }
    RegressionSample::new(xs, ys)
}

fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let bad = || Error::Config(format!("grid must be lo:hi:step, got `{spec}`"));
    let parts: Vec<f64> = spec
        .split(':')
        .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
        .collect::<Result<_>>()?;
    let [lo, hi, step] = parts[..] else { return Err(bad()) };
    if !(step > 0.0 && hi >= lo) {
        return Err(bad());
    }
    let count = ((hi - lo) / step + 1e-9).floor() as usize;
    Ok((0..=count).map(|i| lo + step * i as f64).collect())
}

fn fit(st: &Settings, by_rule: bool) -> Result<(String, usize)> {
    let path: PathBuf = st.get::<String>("data")?.into();
    let data = read_xy(&read_text(&path)?)?;
    let k = kernel(st)?;
    let estimates: Vec<(f64, Option<f64>)> = if by_rule {
        let id: RuleId = st.get::<String>("rule")?.parse()?;
        let (_, _, rules) = build_rules(st, &[id], data.len())?;
        let rule = &rules[0];
        let kappa2 = k.integrals().kappa2;
        rule.xs
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let (h, lambda) = (rule.bandwidth.at(i), rule.weight.at(i));
                let l = interval_l(kappa2, lambda)?;
                Ok((x, cc_estimate_with_offset(&data, x, h, lambda, l, &k).ok()))
            })
            .collect::<Result<_>>()?
    } else {
        let (h, lambda): (f64, f64) = (st.get("h")?, st.get("lambda")?);
        interval_l(1.0, lambda)?;
        parse_grid(&st.get::<String>("grid")?)?
            .into_iter()
            .map(|x| (x, cc_estimate(&data, x, h, lambda, &k).ok()))
            .collect()
    };
    let failed = estimates.iter().filter(|e| e.1.is_none()).count();
    let mut out = st.header();
    let _ = writeln!(out, "# observations = {}", data.len());
    let _ = writeln!(out, "# failed = {failed}");
    out.push_str("x,m_hat\n");
    for (x, e) in estimates {
        let _ = writeln!(out, "{x},{}", opt_num(e));
    }
    Ok((out, failed))
}

fn simulate(st: &Settings, out_path: Option<&Path>) -> Result<()> {
    let ids = RuleId::parse_list(&st.get::<String>("rules")?)?;
    let n: usize = st.get("n")?;
    let trim = st
        .get::<String>("trim")?
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| Error::Config(format!("invalid trim level `{t}`"))))
        .collect::<Result<Vec<_>>>()?;
    let (sc, curve, rules) = build_rules(st, &ids, n)?;
    let mut cfg = SimConfig::new(sc, curve.kernel().clone(), ids, n, st.get("M")?, st.get("seed")?);
    cfg.trim_levels = trim;
    let report = run_with_rules(&cfg, &rules)?;

    let mut out = st.header();
    out.push_str(RULE_COLUMNS);
    out.push_str(",mise_hat");
    for t in &cfg.trim_levels {
        let _ = write!(out, ",sd_{t}");
    }
    out.push_str(",excluded\n");
    for r in &report.rules {
        out.push_str(&rule_summary(&r.rule));
        let _ = write!(out, ",{}", r.mise_hat);
        for (_, sd) in &r.sd {
            let _ = write!(out, ",{sd}");
        }
        let _ = writeln!(out, ",{}", r.excluded);
    }
    emit(out_path, &out)?;
    eprintln!(
        "simulated {} replications of n = {} in {:.2} s",
        report.replications,
        report.n,
        report.elapsed.as_secs_f64()
    );

    if let Some(path) = st.raw("dump-variances") {
        let mut dump = st.header();
        dump.push('x');
        for r in &report.rules {
            let _ = write!(dump, ",var_{}", r.rule.id);
        }
        dump.push('\n');
        if let Some(first) = report.rules.first() {
            for (i, x) in first.xs.iter().enumerate() {
                let _ = write!(dump, "{x}");
                for r in &report.rules {
                    let v = r.variances[i];
                    let _ = write!(dump, ",{}", if v.is_nan() { String::new() } else { v.to_string() });
                }
                dump.push('\n');
            }
        }
        emit(Some(Path::new(path)), &dump)?;
    }
    Ok(())
}

fn parse_bounds(spec: &str, key: &str) -> Result<(f64, f64)> {
    let bad = || Error::Config(format!("{key} bounds must be lo:hi with lo <= hi, got `{spec}`"));
    let (a, b) = spec.split_once(':').ok_or_else(bad)?;
    let (a, b): (f64, f64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
    if !(a <= b) {
        return Err(bad());
    }
    Ok((a, b))
}

/// Best `(a0, a1)` of the vs family with its `V` extremes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelOptResult {
    pub a0: f64,
    pub a1: f64,
    pub v_min: f64,
    pub v_sup: f64,
    pub ratio: f64,
    pub evaluations: usize,
}

/// Coarse grid scan of the `V` ratio over the vs family, then a compass
/// pattern search from the best grid point. Only kernels whose `V` is
/// nondecreasing right of the minimum qualify, since the weight solver needs
/// that branch to be invertible.
pub fn optimize_vs_kernel(
    a0: (f64, f64),
    a1: (f64, f64),
    grid: (usize, usize),
    opts: VOptions,
) -> Result<KernelOptResult> {
    if grid.0 == 0 || grid.1 == 0 {
        return Err(Error::Config("grid sizes must be positive".into()));
    }
    // probe both corners so invalid bounds fail loudly
    for (x, y) in [(a0.0, a1.0), (a0.1, a1.1)] {
        if !(x >= 0.0 && y > 0.0 && x.is_finite() && y.is_finite()) {
            return Err(Error::Config(format!("invalid vs bounds: a0 = {x}, a1 = {y}")));
        }
    }
    let mut evaluations = 0;
    let mut eval = |x: f64, y: f64| -> f64 {
        evaluations += 1;
        KernelSpec::new(KernelFamily::VarianceStabilizing { a0: x, a1: y })
            .and_then(|k| VCurve::with_options(&k, opts))
            .map(|c| c.ratio())
            .unwrap_or(f64::NEG_INFINITY)
    };
    let axis = |(lo, hi): (f64, f64), count: usize| -> Vec<f64> {
        if count == 1 || lo == hi {
            vec![lo]
        } else {
            (0..count).map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64).collect()
        }
    };
    let (xs, ys) = (axis(a0, grid.0), axis(a1, grid.1));
    let mut best = (xs[0], ys[0], f64::NEG_INFINITY);
    for &x in &xs {
        for &y in &ys {
            let r = eval(x, y);
            if r > best.2 {
                best = (x, y, r);
            }
        }
    }
    if !best.2.is_finite() {
        return Err(Error::Config("no valid vs kernel inside the bounds".into()));
    }
    let spacing = |v: &[f64]| if v.len() > 1 { v[1] - v[0] } else { 0.0 };
    let mut step = (spacing(&xs) / 2.0, spacing(&ys) / 2.0);
    let floor = (1e-7 * (a0.1 - a0.0), 1e-7 * (a1.1 - a1.0));
    while step.0 > floor.0 || step.1 > floor.1 {
        let mut moved = false;
        for (dx, dy) in [(step.0, 0.0), (-step.0, 0.0), (0.0, step.1), (0.0, -step.1)] {
            if dx == 0.0 && dy == 0.0 {
                continue;
            }
            let x = (best.0 + dx).clamp(a0.0, a0.1);
            let y = (best.1 + dy).clamp(a1.0, a1.1);
            if (x, y) == (best.0, best.1) {
                continue;
            }
            let r = eval(x, y);
            if r > best.2 {
                best = (x, y, r);
                moved = true;
                break;
            }
        }
        if !moved {
            step = (step.0 / 2.0, step.1 / 2.0);
        }
    }
    let k = KernelSpec::new(KernelFamily::VarianceStabilizing { a0: best.0, a1: best.1 })?;
    let c = VCurve::with_options(&k, opts)?;
    Ok(KernelOptResult {
        a0: best.0,
        a1: best.1,
        v_min: c.v_min(),
        v_sup: c.v_sup(),
        ratio: c.ratio(),
        evaluations,
    })
}

fn kernel_opt(st: &Settings) -> Result<String> {
    let family: String = st.get("family")?;
    if family.trim() != "vs" {
        return Err(Error::Config(format!("only the vs family can be searched, got `{family}`")));
    }
    let grid_spec: String = st.get("grid")?;
    let bad = || Error::Config(format!("grid must be <n0>x<n1>, got `{grid_spec}`"));
    let (g0, g1) = grid_spec.split_once('x').ok_or_else(bad)?;
    let grid = (g0.trim().parse().map_err(|_| bad())?, g1.trim().parse().map_err(|_| bad())?);
    let a0 = parse_bounds(&st.get::<String>("a0")?, "a0")?;
    let a1 = parse_bounds(&st.get::<String>("a1")?, "a1")?;
    let best = optimize_vs_kernel(a0, a1, grid, curve_options(st)?)?;
    let mut out = st.header();
    let _ = writeln!(out, "# evaluations = {}", best.evaluations);
    out.push_str("a0,a1,v_min,v_sup,ratio\n");
    let _ = writeln!(out, "{},{},{},{},{}", best.a0, best.a1, best.v_min, best.v_sup, best.ratio);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_parsing() {
        let map = parse_config("# comment\n\nk = 2\nkernel=epanechnikov\n").unwrap();
        assert_eq!(map["k"], "2");
        assert_eq!(map["kernel"], "epanechnikov");
        assert!(matches!(parse_config("bogus = 1"), Err(Error::Config(_))));
        assert!(matches!(parse_config("no equals sign"), Err(Error::Config(_))));
    }

    #[test]
    fn precedence_is_cli_then_file_then_default() {
        let file = parse_config("k = 2\nn = 500").unwrap();
        let st = Settings::resolve(
            "bandwidths",
            &[("k", Some("1")), ("n", Some("100")), ("kernel", Some("gaussian"))],
            &file,
            &[("n", Some("1000".into())), ("kernel", None)],
        );
        assert_eq!(st.get::<u32>("k").unwrap(), 2);
        assert_eq!(st.get::<usize>("n").unwrap(), 1000);
        assert_eq!(st.raw("kernel"), Some("gaussian"));
        assert_eq!(st.header(), "# vslocreg bandwidths\n# k = 2\n# n = 1000\n# kernel = gaussian\n");
        assert!(st.get::<f64>("kernel").is_err());
        assert!(st.get::<f64>("missing").is_err());
    }

    #[test]
    fn xy_reader() {
        let d = read_xy("x,y\n# note\n0.1, 1\n0.2,2\n\n0.3,3\n").unwrap();
        assert_eq!(d.len(), 3);
        assert!(read_xy("0.1,1\nfoo,2\n").is_err());
        assert!(read_xy("0.1,1\n").is_err());
    }

    #[test]
    fn grid_parsing() {
        let g = parse_grid("0:1:0.25").unwrap();
        assert_eq!(g, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert!(parse_grid("0:1").is_err());
        assert!(parse_grid("1:0:0.1").is_err());
        assert!(parse_grid("0:1:0").is_err());
    }

    struct Golden {
        dir: tempfile::TempDir,
    }

    impl Golden {
        fn new() -> Self {
            Golden {
                dir: tempfile::tempdir().unwrap(),
            }
        }

        fn path(&self, name: &str) -> PathBuf {
            self.dir.path().join(name)
        }

        /// Runs a command with `--out` and returns the exit code and output text.
        fn run(&self, args: &[&str]) -> (i32, String) {
            let out = self.path("out.csv");
            let _ = std::fs::remove_file(&out);
            let mut argv = vec!["vslocreg".to_string()];
            argv.extend(args.iter().map(|a| a.to_string()));
            argv.extend(["--out".to_string(), out.display().to_string()]);
            let code = run(argv);
            (code, std::fs::read_to_string(&out).unwrap_or_default())
        }

        /// Compares against `tests/golden/<name>`; set `UPDATE_GOLDEN=1` to rewrite.
        fn check(&self, name: &str, args: &[&str], expected_code: i32) {
            let (code, text) = self.run(args);
            assert_eq!(code, expected_code, "exit code for {args:?}");
            let file = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
            if std::env::var_os("UPDATE_GOLDEN").is_some() {
                std::fs::write(&file, &text).unwrap();
            }
            let want = std::fs::read_to_string(&file).unwrap_or_else(|_| panic!("missing golden file {}", file.display()));
            assert_eq!(text, want, "output of {args:?} differs from {}", file.display());
        }
    }

    fn golden_dir() -> PathBuf {
        Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
    }

    #[test]
    fn golden_kernel_table() {
        let g = Golden::new();
        g.check("kernel_table.csv", &["kernel-table"], 0);
        g.check("kernel_table_vs.csv", &["kernel-table", "--kernels", "vs:0:6.0131,uniform"], 0);
        let (code, text) = g.run(&["kernel-table", "--kernels", ""]);
        assert_eq!(code, 0);
        assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 18);
        assert_eq!(g.run(&["kernel-table", "--kernels", "nonsense"]).0, EXIT_ERROR);
    }

    #[test]
    fn golden_vcurve() {
        Golden::new().check(
            "vcurve_epanechnikov.csv",
            &["vcurve", "--kernel", "epanechnikov", "--lambda-max", "1", "--step", "0.1"],
            0,
        );
    }

    #[test]
    fn golden_feasibility_exit_codes() {
        let g = Golden::new();
        g.check("feasibility_example_i.csv", &["feasibility"], 0);
        g.check(
            "feasibility_example_ii.csv",
            &["feasibility", "--sigma-offset", "0.05", "--sigma-slope", "0.05"],
            EXIT_INFEASIBLE,
        );
        assert_eq!(g.run(&["feasibility", "--sigma-slope", "0"]).0, 0);
        assert_eq!(g.run(&["feasibility", "--kernel", "vs:0:1"]).0, EXIT_ERROR);
        assert_eq!(g.run(&["feasibility", "--k", "7"]).0, EXIT_ERROR);
    }

    #[test]
    fn golden_profiles_and_bandwidths() {
        let g = Golden::new();
        g.check("profiles_a.csv", &["profiles", "--rule", "a", "--grid-step", "0.05"], 0);
        g.check(
            "bandwidths_k2.csv",
            &["bandwidths", "--k", "2", "--n", "500", "--rules", "a,b,c,d", "--grid-step", "0.01"],
            0,
        );
    }

    #[test]
    fn golden_fit() {
        let g = Golden::new();
        let data = golden_dir().join("fit_data.csv");
        let data = data.to_str().unwrap();
        let (code, text) = g.run(&["fit", "--data", data, "--h", "0.1", "--lambda", "0.2", "--grid", "0:1:0.1"]);
        assert_eq!(code, 0);
        let body: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
        // The header echoes the absolute data path, so only the body is compared.
        let file = golden_dir().join("fit.csv");
        if std::env::var_os("UPDATE_GOLDEN").is_some() {
            let stripped: String = body.iter().map(|l| format!("{l}\n")).collect();
            std::fs::write(&file, stripped).unwrap();
        }
        let want = std::fs::read_to_string(&file).unwrap();
        assert_eq!(body, want.lines().collect::<Vec<_>>());
        assert!(text.contains("# h = 0.1\n"));
        assert_eq!(g.run(&["fit", "--data", data, "--h", "0.1"]).0, EXIT_ERROR);
    }

    #[test]
    fn golden_simulate() {
        let g = Golden::new();
        let dump = g.path("var.csv");
        let dump = dump.to_str().unwrap();
        let args = [
            "simulate", "--k", "1", "--n", "100", "--M", "5", "--rules", "c,g", "--grid-step", "0.02", "--seed", "3",
        ];
        g.check("simulate.csv", &args, 0);
        let mut with_dump = args.to_vec();
        with_dump.extend(["--dump-variances", dump]);
        let (code, _) = g.run(&with_dump);
        assert_eq!(code, 0);
        let text = std::fs::read_to_string(dump).unwrap();
        let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(rows[0], "x,var_c,var_g");
        assert_eq!(rows.len(), 52);
    }

    #[test]
    fn golden_kernel_opt() {
        Golden::new().check(
            "kernel_opt_small.csv",
            &["kernel-opt", "--grid", "3x3", "--a0", "0:0.5", "--a1", "4:8"],
            0,
        );
    }

    #[test]
    fn config_file_is_echoed_and_overridden() {
        let g = Golden::new();
        let cfg = g.path("run.cfg");
        std::fs::write(&cfg, "# settings\nkernel = epanechnikov\nlambda-max = 0.5\nstep = 0.25\n").unwrap();
        let cfg = cfg.to_str().unwrap();
        let (code, text) = g.run(&["vcurve", "--config", cfg, "--step", "0.1"]);
        assert_eq!(code, 0);
        assert!(text.starts_with("# vslocreg vcurve\n# kernel = epanechnikov\n# lambda-max = 0.5\n# step = 0.1\n"));
        assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 6);
        let bad = g.path("bad.cfg");
        std::fs::write(&bad, "kernal = gaussian\n").unwrap();
        assert_eq!(g.run(&["vcurve", "--config", bad.to_str().unwrap()]).0, EXIT_ERROR);
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(["vslocreg", "no-such-command"]), EXIT_ERROR);
        assert_eq!(run(["vslocreg", "vcurve", "--step", "abc"]), EXIT_ERROR);
    }

    #[test]
    fn kernel_search_finds_edge_heavy_optimum() {
        let r = optimize_vs_kernel((0.0, 0.5), (0.5, 12.0), (11, 11), VOptions::default()).unwrap();
        assert!(r.a0 < 0.01, "{r:?}");
        assert!((5.5..7.0).contains(&r.a1), "{r:?}");
        assert!((2.58..=2.60).contains(&r.ratio), "{r:?}");
    }

    #[test]
    fn degenerate_kernel_search_returns_the_point() {
        let r = optimize_vs_kernel((0.5, 0.5), (2.0, 2.0), (3, 3), VOptions::default()).unwrap();
        assert_eq!((r.a0, r.a1), (0.5, 2.0));
        let uniform = v_extremes(&"uniform".parse().unwrap(), VOptions::default()).unwrap();
        assert!((r.ratio - uniform.ratio()).abs() < 1e-9);
    }
}
