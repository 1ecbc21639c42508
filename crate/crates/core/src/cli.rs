//! Configuration file, command dispatch and report writing.
//!
//! Config files hold one `key = value` per line; `#` starts a comment.
//! Complex numbers are written `re+imi` (`1.3`, `0.2i`, `1e-6-3i` are all
//! accepted), lists are comma separated. Unknown keys are errors.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::algebra::{c, default_grid, CMat, ModelParams, C64};
use crate::error::{Error, Result};
use crate::relations::{self as rel, Direction, LimitMode, TqForm, Verdict, VerificationReport};
use crate::reps::{rep_limit_check, OscSign};
use crate::transfer::{joint_spectrum, Chain};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Relation {
    Commutativity,
    Tq,
    Factorization,
    Wronskian,
    Plus,
    Fusion,
    Q0,
    Boundary,
}

impl Relation {
    pub const ALL: [Relation; 8] = [
        Relation::Commutativity,
        Relation::Tq,
        Relation::Factorization,
        Relation::Wronskian,
        Relation::Plus,
        Relation::Fusion,
        Relation::Q0,
        Relation::Boundary,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Relation::Commutativity => "commutativity",
            Relation::Tq => "tq",
            Relation::Factorization => "factorization",
            Relation::Wronskian => "wronskian",
            Relation::Plus => "plus",
            Relation::Fusion => "fusion",
            Relation::Q0 => "q0",
            Relation::Boundary => "boundary",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Relation::ALL.into_iter().find(|r| r.name() == s)
    }

    /// Whether the relation involves infinite auxiliary traces.
    pub fn infinite(self) -> bool {
        !matches!(self, Relation::Fusion)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Verify,
    Sweep,
    Limits,
    Spectrum,
    Bethe,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Verify => "verify",
            Command::Sweep => "sweep",
            Command::Limits => "limits",
            Command::Spectrum => "spectrum",
            Command::Bethe => "bethe",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub params: ModelParams,
    pub relations: Vec<Relation>,
    pub j_list: Vec<f64>,
    pub phi_list: Vec<f64>,
    pub q0_lambda: C64,
    pub limit_lambda: C64,
    pub limit_j_list: Vec<f64>,
    pub limit_modes: Vec<LimitMode>,
    pub rep_limit_j_list: Vec<f64>,
    pub seed: u64,
    pub random_draws: usize,
    pub reference_lambda: C64,
    pub bethe_samples: usize,
    pub bethe_radius: f64,
    pub sweep_key: String,
    pub sweep_values: Vec<String>,
    pub export_matrices: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            params: ModelParams::default(),
            relations: vec![
                Relation::Commutativity,
                Relation::Tq,
                Relation::Factorization,
                Relation::Wronskian,
                Relation::Plus,
                Relation::Fusion,
            ],
            j_list: vec![0.5, 1.0],
            phi_list: vec![0.1, 0.08, 0.06, 0.05, 0.04, 0.02],
            q0_lambda: c(1e-6, 0.0),
            limit_lambda: default_grid(8)[0],
            limit_j_list: (2..=16).map(f64::from).collect(),
            limit_modes: vec![LimitMode::ZLimit, LimitMode::ZplusLimit],
            rep_limit_j_list: (2..=8).map(f64::from).collect(),
            seed: 1,
            random_draws: 2,
            reference_lambda: c(1.3, 0.2),
            bethe_samples: 12,
            bethe_radius: 1.1,
            sweep_key: "trunc_n".into(),
            sweep_values: vec!["16".into(), "32".into(), "48".into()],
            export_matrices: false,
        }
    }
}

/// Config keys in canonical order.
pub const KEYS: [&str; 24] = [
    "q",
    "phi",
    "sites",
    "trunc_n",
    "tol_rel",
    "extra_samples",
    "lambda_grid",
    "relations",
    "j_list",
    "phi_list",
    "q0_lambda",
    "limit_lambda",
    "limit_j_list",
    "limit_modes",
    "rep_limit_j_list",
    "seed",
    "random_draws",
    "reference_lambda",
    "bethe_samples",
    "bethe_radius",
    "sweep_key",
    "sweep_values",
    "export_matrices",
    "grid_points",
];

pub fn format_f64(x: f64) -> String {
    format!("{x:?}")
}

pub fn format_complex(z: C64) -> String {
    let sign = if z.im.is_sign_negative() { "-" } else { "+" };
    format!("{:?}{}{:?}i", z.re, sign, z.im.abs())
}

pub fn parse_complex(s: &str) -> Option<C64> {
    let s = s.trim();
    let Some(body) = s.strip_suffix('i') else {
        return s.parse::<f64>().ok().map(|re| c(re, 0.0));
    };
    let bytes = body.as_bytes();
    let split = (1..bytes.len())
        .rev()
        .find(|&k| (bytes[k] == b'+' || bytes[k] == b'-') && !matches!(bytes[k - 1], b'e' | b'E'));
    match split {
        Some(k) => {
            let re = body[..k].parse::<f64>().ok()?;
            let im_s = &body[k..];
            let im = match im_s {
                "+" => 1.0,
                "-" => -1.0,
                _ => im_s.parse::<f64>().ok()?,
            };
            Some(c(re, im))
        }
        None => {
            let im = match body {
                "" | "+" => 1.0,
                "-" => -1.0,
                _ => body.parse::<f64>().ok()?,
            };
            Some(c(0.0, im))
        }
    }
}

fn list<T>(v: &str, f: impl Fn(&str) -> Option<T>) -> Option<Vec<T>> {
    if v.trim().is_empty() {
        return Some(vec![]);
    }
    v.split(',').map(|x| f(x.trim())).collect()
}

fn join<T>(v: &[T], f: impl Fn(&T) -> String) -> String {
    v.iter().map(f).collect::<Vec<_>>().join(",")
}

fn mode_name(m: LimitMode) -> &'static str {
    match m {
        LimitMode::ZLimit => "z",
        LimitMode::ZplusLimit => "zplus",
    }
}

impl RunConfig {
    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let v = value.trim();
        let bad = || format!("invalid value {v:?} for {key}");
        let f = |s: &str| s.parse::<f64>().ok();
        let u = |s: &str| s.parse::<usize>().ok();
        match key {
            "q" => self.params.q = parse_complex(v).ok_or_else(bad)?,
            "phi" => self.params.phi = f(v).ok_or_else(bad)?,
            "sites" => self.params.sites = u(v).ok_or_else(bad)?,
            "trunc_n" => self.params.trunc_n = u(v).ok_or_else(bad)?,
            "tol_rel" => self.params.tol_rel = f(v).ok_or_else(bad)?,
            "extra_samples" => self.params.conventions.extra_samples = u(v).ok_or_else(bad)?,
            "lambda_grid" => self.params.lambda_grid = list(v, parse_complex).ok_or_else(bad)?,
            "grid_points" => self.params.lambda_grid = default_grid(u(v).ok_or_else(bad)?),
            "relations" => self.relations = list(v, Relation::parse).ok_or_else(bad)?,
            "j_list" => self.j_list = list(v, f).ok_or_else(bad)?,
            "phi_list" => self.phi_list = list(v, f).ok_or_else(bad)?,
            "q0_lambda" => self.q0_lambda = parse_complex(v).ok_or_else(bad)?,
            "limit_lambda" => self.limit_lambda = parse_complex(v).ok_or_else(bad)?,
            "limit_j_list" => self.limit_j_list = list(v, f).ok_or_else(bad)?,
            "limit_modes" => {
                self.limit_modes = list(v, |s| match s {
                    "z" => Some(LimitMode::ZLimit),
                    "zplus" => Some(LimitMode::ZplusLimit),
                    _ => None,
                })
                .ok_or_else(bad)?
            }
            "rep_limit_j_list" => self.rep_limit_j_list = list(v, f).ok_or_else(bad)?,
            "seed" => self.seed = v.parse().map_err(|_| bad())?,
            "random_draws" => self.random_draws = u(v).ok_or_else(bad)?,
            "reference_lambda" => self.reference_lambda = parse_complex(v).ok_or_else(bad)?,
            "bethe_samples" => self.bethe_samples = u(v).ok_or_else(bad)?,
            "bethe_radius" => self.bethe_radius = f(v).ok_or_else(bad)?,
            "sweep_key" => {
                if !KEYS.contains(&v) || v == "sweep_key" || v == "sweep_values" {
                    return Err(bad());
                }
                self.sweep_key = v.into()
            }
            "sweep_values" => self.sweep_values = list(v, |s| Some(s.to_string())).ok_or_else(bad)?,
            "export_matrices" => self.export_matrices = v.parse().map_err(|_| bad())?,
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    /// Value of `key` in canonical form.
    pub fn get(&self, key: &str) -> Option<String> {
        let p = &self.params;
        Some(match key {
            "q" => format_complex(p.q),
            "phi" => format_f64(p.phi),
            "sites" => p.sites.to_string(),
            "trunc_n" => p.trunc_n.to_string(),
            "tol_rel" => format_f64(p.tol_rel),
            "extra_samples" => p.conventions.extra_samples.to_string(),
            "lambda_grid" => join(&p.lambda_grid, |z| format_complex(*z)),
            "relations" => join(&self.relations, |r| r.name().to_string()),
            "j_list" => join(&self.j_list, |x| format_f64(*x)),
            "phi_list" => join(&self.phi_list, |x| format_f64(*x)),
            "q0_lambda" => format_complex(self.q0_lambda),
            "limit_lambda" => format_complex(self.limit_lambda),
            "limit_j_list" => join(&self.limit_j_list, |x| format_f64(*x)),
            "limit_modes" => join(&self.limit_modes, |m| mode_name(*m).to_string()),
            "rep_limit_j_list" => join(&self.rep_limit_j_list, |x| format_f64(*x)),
            "seed" => self.seed.to_string(),
            "random_draws" => self.random_draws.to_string(),
            "reference_lambda" => format_complex(self.reference_lambda),
            "bethe_samples" => self.bethe_samples.to_string(),
            "bethe_radius" => format_f64(self.bethe_radius),
            "sweep_key" => self.sweep_key.clone(),
            "sweep_values" => self.sweep_values.join(","),
            "export_matrices" => self.export_matrices.to_string(),
            _ => return None,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config { line: i + 1, msg: format!("expected key = value, got {line:?}") })?;
            let k = k.trim();
            if let Some(prev) = seen.insert(k.to_string(), i + 1) {
                return Err(Error::Config { line: i + 1, msg: format!("duplicate key {k:?} (first on line {prev})") });
            }
            cfg.set(k, v).map_err(|msg| Error::Config { line: i + 1, msg })?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    /// Canonical text form; `parse(render(c)) == c` and rendering a parsed
    /// canonical text gives the same bytes back.
    pub fn render(&self) -> String {
        let mut s = String::new();
        for k in KEYS {
            if let Some(v) = self.get(k) {
                s.push_str(&format!("{k} = {v}\n"));
            }
        }
        s
    }

    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config { line: 0, msg: format!("override {kv:?} is not key=value") })?;
        self.set(k.trim(), v).map_err(|msg| Error::Config { line: 0, msg: format!("override: {msg}") })
    }

    /// Checks parameter preconditions before any computation.
    pub fn validate(&self, command: Command) -> Result<()> {
        let infinite = match command {
            Command::Verify | Command::Sweep => self.relations.iter().any(|r| r.infinite()),
            _ => true,
        };
        self.params.validate(infinite)?;
        if self.params.lambda_grid.is_empty() {
            return Err(Error::InvalidParams("empty lambda grid".into()));
        }
        if command == Command::Bethe && self.bethe_samples < self.params.sites + 2 {
            return Err(Error::InvalidParams(format!("bethe_samples must be at least sites + 2 = {}", self.params.sites + 2)));
        }
        Ok(())
    }

    /// Relations that `verify` runs, in order.
    pub fn plan(&self) -> Vec<Relation> {
        self.relations.clone()
    }

    /// File-name tag embedding L, q, phi and N.
    pub fn tag(&self) -> String {
        let p = &self.params;
        format!("L{}_q{}_phi{}_N{}", p.sites, format_complex(p.q), format_f64(p.phi), p.trunc_n)
    }
}

/// Matrix text export: header `rows cols`, then one `re im` pair per entry in
/// row-major order, 17 significant digits.
pub fn matrix_to_text(m: &CMat) -> String {
    let mut s = format!("{} {}\n", m.nrows(), m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            let z = m[(i, j)];
            s.push_str(&format!("{:.16e} {:.16e}\n", z.re, z.im));
        }
    }
    s
}

pub fn matrix_from_text(text: &str) -> Result<CMat> {
    let bad = |msg: &str| Error::Config { line: 0, msg: msg.into() };
    let mut lines = text.lines();
    let head: Vec<usize> = lines
        .next()
        .ok_or_else(|| bad("empty matrix file"))?
        .split_whitespace()
        .map(|x| x.parse().map_err(|_| bad("bad header")))
        .collect::<Result<_>>()?;
    if head.len() != 2 {
        return Err(bad("header must be `rows cols`"));
    }
    let mut vals = Vec::with_capacity(head[0] * head[1]);
    for l in lines {
        let p: Vec<f64> = l.split_whitespace().map(|x| x.parse().map_err(|_| bad("bad entry"))).collect::<Result<_>>()?;
        if p.len() != 2 {
            return Err(bad("entry must be `re im`"));
        }
        vals.push(c(p[0], p[1]));
    }
    if vals.len() != head[0] * head[1] {
        return Err(Error::DimensionMismatch(format!("expected {} entries, found {}", head[0] * head[1], vals.len())));
    }
    Ok(CMat::from_row_slice(head[0], head[1], &vals))
}

/// Output of one command before it is written.
pub struct RunOutput {
    pub results: Vec<Value>,
    pub verdicts: Vec<(String, Verdict)>,
    /// File name and CSV rows, header first.
    pub tables: Vec<(String, Vec<Vec<String>>)>,
    pub matrices: Vec<(String, CMat)>,
}

impl RunOutput {
    fn new() -> Self {
        RunOutput { results: vec![], verdicts: vec![], tables: vec![], matrices: vec![] }
    }

    pub fn all_pass(&self) -> bool {
        !self.verdicts.is_empty() && self.verdicts.iter().all(|(_, v)| *v == Verdict::Pass)
    }

    fn push_report(&mut self, r: &VerificationReport, tag: &str) {
        self.verdicts.push((r.relation.clone(), r.verdict));
        self.results.push(serde_json::to_value(r).unwrap());
        if !r.points.is_empty() {
            let mut rows = vec![vec!["lambda_re".into(), "lambda_im".into(), "before".into(), "after".into()]];
            for p in &r.points {
                rows.push(vec![
                    format_f64(p.lambda.re),
                    format_f64(p.lambda.im),
                    format!("{:e}", p.before),
                    format!("{:e}", p.after),
                ]);
            }
            self.tables.push((format!("{}_{tag}.csv", r.relation), rows));
        }
    }

    fn push_error(&mut self, relation: &str, e: Error) {
        self.verdicts.push((relation.into(), Verdict::Error));
        self.results.push(json!({ "relation": relation, "verdict": "error", "error": e.to_string() }));
    }

    fn absorb(&mut self, relation: &str, tag: &str, r: Result<VerificationReport>) {
        match r {
            Ok(r) => self.push_report(&r, tag),
            Err(e) => self.push_error(relation, e.context(relation.to_string())),
        }
    }
}

/// Tolerance for statements about infinite auxiliary spaces and limits.
pub const TOL_INFINITE: f64 = 1e-6;
/// Tolerance for the finite-auxiliary commutators.
pub const TOL_FINITE_COMM: f64 = 1e-10;
/// Tolerance for the zero-twist continuity statements.
pub const TOL_CONTINUITY: f64 = 1e-4;
/// Tolerance for exact identities such as the vanishing bracket.
pub const TOL_EXACT: f64 = 1e-12;

/// Random spectral parameters for commutativity, drawn from an annulus
/// sector away from the branch cut.
pub fn random_lambdas(seed: u64, n: usize) -> Vec<C64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| C64::from_polar(rng.gen_range(0.8..2.5), rng.gen_range(-1.0..1.0))).collect()
}

pub fn verify(cfg: &RunConfig) -> RunOutput {
    let mut out = RunOutput::new();
    let chain = Chain::new(cfg.params.clone());
    let grid = &cfg.params.lambda_grid;
    let tol = cfg.params.tol_rel;
    let tag = cfg.tag();
    for relation in cfg.plan() {
        match relation {
            Relation::Commutativity => {
                let mut ls: Vec<C64> = grid.iter().take(2).cloned().collect();
                ls.extend(random_lambdas(cfg.seed, cfg.random_draws));
                out.absorb("commutativity", &tag, rel::check_commutativity_families(&chain, &ls, TOL_FINITE_COMM, tol));
            }
            Relation::Tq => {
                for form in [TqForm::Primed, TqForm::Unprimed] {
                    for sign in [OscSign::Plus, OscSign::Minus] {
                        out.absorb("tq", &tag, rel::check_tq(&chain, sign, form, grid, tol, TOL_INFINITE));
                    }
                }
            }
            Relation::Factorization => {
                for &j in &cfg.j_list {
                    out.absorb("factorization", &tag, rel::check_factorization(&chain, j, grid, tol, TOL_INFINITE));
                    let cont = rel::check_factorization_continuity(&chain, j, grid[0], &cfg.phi_list, TOL_CONTINUITY);
                    match cont {
                        Ok((r, pc)) => {
                            let mut v = serde_json::to_value(&r).unwrap();
                            v["continuity"] = serde_json::to_value(&pc).unwrap();
                            out.verdicts.push((r.relation.clone(), r.verdict));
                            out.results.push(v);
                        }
                        Err(e) => out.push_error("factorization_continuity", e),
                    }
                }
            }
            Relation::Wronskian => {
                for &j in &cfg.j_list {
                    out.absorb("wronskian", &tag, rel::check_wronskian(&chain, j, grid, tol, TOL_INFINITE));
                }
                out.absorb("wronskian_bracket", &tag, rel::check_wronskian_bracket(&chain, &cfg.j_list, grid, TOL_EXACT, tol));
            }
            Relation::Plus => {
                for &j in &cfg.j_list {
                    out.absorb("plus", &tag, rel::check_plus_decomposition(&chain, j, grid, tol));
                    out.absorb("consistency_web", &tag, rel::check_consistency_web(&chain, j, grid));
                }
            }
            Relation::Fusion => {
                let mut js = vec![0.0];
                js.extend(cfg.j_list.iter().filter(|&&j| j != 0.0));
                for &j in &js {
                    for d in [Direction::Plus, Direction::Minus] {
                        let t = if j == 0.0 { TOL_EXACT } else { tol };
                        out.absorb("fusion", &tag, rel::check_fusion(&chain, j, d, grid, t));
                    }
                }
            }
            Relation::Q0 => {
                out.absorb("q0", &tag, rel::check_q_at_zero(&chain, cfg.q0_lambda, &cfg.phi_list, TOL_CONTINUITY));
            }
            Relation::Boundary => {
                out.absorb("boundary", &tag, rel::check_boundary(&chain, grid, tol));
            }
        }
    }
    out
}

pub fn sweep(cfg: &RunConfig) -> Result<RunOutput> {
    let mut out = RunOutput::new();
    let mut rows = vec![vec!["key".into(), "value".into(), "relation".into(), "max_after".into(), "verdict".into()]];
    for v in &cfg.sweep_values {
        let mut c2 = cfg.clone();
        c2.set(&cfg.sweep_key, v).map_err(|msg| Error::Config { line: 0, msg })?;
        c2.validate(Command::Sweep)?;
        let o = verify(&c2);
        for (res, (name, verdict)) in o.results.iter().zip(&o.verdicts) {
            let max_after = res["points"]
                .as_array()
                .map(|ps| ps.iter().filter_map(|p| p["after"].as_f64()).fold(0.0, f64::max))
                .unwrap_or(f64::NAN);
            rows.push(vec![
                cfg.sweep_key.clone(),
                v.clone(),
                name.clone(),
                format!("{max_after:e}"),
                serde_json::to_value(verdict).unwrap().as_str().unwrap().to_string(),
            ]);
        }
        out.results.push(json!({ "key": cfg.sweep_key, "value": v, "results": o.results }));
        out.verdicts.extend(o.verdicts.into_iter().map(|(n, d)| (format!("{}={v}:{n}", cfg.sweep_key), d)));
    }
    out.tables.push((format!("sweep_{}_{}.csv", cfg.sweep_key, cfg.tag()), rows));
    Ok(out)
}

pub fn limits(cfg: &RunConfig) -> RunOutput {
    let mut out = RunOutput::new();
    let chain = Chain::new(cfg.params.clone());
    let tag = cfg.tag();
    for &mode in &cfg.limit_modes {
        let name = format!("limit_{}", mode_name(mode));
        match rel::limit_study(&chain, cfg.limit_lambda, &cfg.limit_j_list, mode, 1e-4) {
            Ok(r) => {
                let mut rows = vec![vec!["j".into(), "series".into(), "sector".into(), "err".into()]];
                for s in &r.series {
                    for (j, e) in r.j_list.iter().zip(&s.errors) {
                        rows.push(vec![format_f64(*j), s.label.clone(), s.sector.to_string(), format!("{e:e}")]);
                    }
                }
                out.tables.push((format!("{name}_{tag}.csv"), rows));
                out.verdicts.push((name, r.verdict));
                out.results.push(serde_json::to_value(&r).unwrap());
            }
            Err(e) => out.push_error(&name, e),
        }
    }
    let t = rep_limit_check(&cfg.rep_limit_j_list, cfg.limit_lambda, cfg.params.q, cfg.params.trunc_n.min(8));
    let errs = t.converging_errors();
    let n = errs.len();
    let monotone = errs.windows(2).all(|w| w[1] < w[0]);
    let fin = errs.last().copied().unwrap_or(f64::NAN);
    let ratio = if n >= 2 { errs[n - 1] / errs[n - 2] } else { f64::NAN };
    let target = cfg.params.q.norm().powi(4);
    let ratio_ok = (ratio / target - 1.0).abs() <= 0.2;
    let pass = monotone && fin <= 1e-4 && ratio_ok;
    let mut rows = vec![vec!["j".into(), "err_minus".into(), "err_plus".into()]];
    for r in &t.rows {
        rows.push(vec![format_f64(r.j), format!("{:e}", r.err_minus), format!("{:e}", r.err_plus)]);
    }
    out.tables.push((format!("rep_limit_{tag}.csv"), rows));
    out.verdicts.push(("rep_limit".into(), if pass { Verdict::Pass } else { Verdict::Fail }));
    out.results.push(json!({
        "relation": "rep_limit",
        "table": t,
        "monotone": monotone,
        "final_error": fin,
        "last_ratio": ratio,
        "ratio_target": target,
        "verdict": if pass { "pass" } else { "fail" },
    }));
    out
}

pub fn spectrum(cfg: &RunConfig) -> Result<RunOutput> {
    let mut out = RunOutput::new();
    let chain = Chain::new(cfg.params.clone());
    let l = cfg.params.sites;
    let tag = cfg.tag();
    let reference = chain.z(cfg.reference_lambda)?;
    let grid = &cfg.params.lambda_grid;
    let mut family: Vec<(String, CMat)> = Vec::new();
    for (k, &lam) in grid.iter().enumerate() {
        family.push((format!("Z_lambda{k}"), chain.z(lam)?));
        family.push((format!("Qplus_lambda{k}"), chain.q_plus(lam)?));
        family.push((format!("Qminus_lambda{k}"), chain.q_minus(lam)?));
    }
    let ops: Vec<CMat> = family.iter().map(|(_, m)| m.clone()).collect();
    let table = joint_spectrum(&ops, &reference, l)?;
    for (f, (name, m)) in family.iter().enumerate() {
        let mut rows = vec![vec!["sector".into(), "index".into(), "Re".into(), "Im".into()]];
        for r in &table.rows {
            rows.push(vec![r.sector.to_string(), r.index.to_string(), format_f64(r.values[f].re), format_f64(r.values[f].im)]);
        }
        out.tables.push((format!("spectrum_{name}_{tag}.csv"), rows));
        if cfg.export_matrices {
            out.matrices.push((format!("matrix_{name}_{tag}.txt"), m.clone()));
        }
    }
    let pass = table.leakage <= TOL_INFINITE;
    out.verdicts.push(("spectrum".into(), if pass { Verdict::Pass } else { Verdict::Fail }));
    out.results.push(json!({
        "relation": "spectrum",
        "family": family.iter().map(|(n, _)| n.clone()).collect::<Vec<_>>(),
        "leakage": table.leakage,
        "reference_eigenvalues": table.reference,
        "verdict": if pass { "pass" } else { "fail" },
    }));
    Ok(out)
}

pub fn bethe(cfg: &RunConfig) -> Result<RunOutput> {
    let mut out = RunOutput::new();
    let chain = Chain::new(cfg.params.clone());
    let samples = rel::bethe_samples(cfg.bethe_samples, cfg.bethe_radius);
    let r = rel::extract_bethe_roots(&chain, &samples, cfg.reference_lambda, 1e-9)?;
    let mut rows = vec![vec!["sector".into(), "index".into(), "root_re".into(), "root_im".into(), "tq_residual".into()]];
    for s in &r.states {
        for b in &s.roots {
            rows.push(vec![
                s.sector.to_string(),
                s.index.to_string(),
                format_f64(b.root.re),
                format_f64(b.root.im),
                format!("{:e}", b.tq_residual),
            ]);
        }
    }
    out.tables.push((format!("bethe_{}.csv", cfg.tag()), rows));
    let pass = r.max_tq_residual <= TOL_INFINITE && r.counts_match;
    out.verdicts.push(("bethe".into(), if pass { Verdict::Pass } else { Verdict::Fail }));
    let mut v = serde_json::to_value(&r).unwrap();
    v["relation"] = json!("bethe");
    v["verdict"] = json!(if pass { "pass" } else { "fail" });
    out.results.push(v);
    Ok(out)
}

/// Runs `command` and returns the output, or the error that stopped it.
pub fn run(command: Command, cfg: &RunConfig) -> Result<RunOutput> {
    cfg.validate(command)?;
    match command {
        Command::Verify => Ok(verify(cfg)),
        Command::Sweep => sweep(cfg),
        Command::Limits => Ok(limits(cfg)),
        Command::Spectrum => spectrum(cfg),
        Command::Bethe => bethe(cfg),
    }
}

/// Report document. Everything except `timing` is a function of the
/// configuration text and overrides.
pub fn report_json(command: Command, config_text: &str, overrides: &[String], cfg: &RunConfig, out: &RunOutput, timing: Value) -> Value {
    let verdict = if out.all_pass() { "pass" } else if out.verdicts.iter().any(|(_, v)| *v == Verdict::Error) { "error" } else { "fail" };
    json!({
        "command": command.name(),
        "config_text": config_text,
        "overrides": overrides,
        "config": cfg.render(),
        "results": out.results,
        "verdicts": out.verdicts.iter().map(|(n, v)| json!({ "name": n, "verdict": v })).collect::<Vec<_>>(),
        "verdict": verdict,
        "timing": timing,
    })
}

fn write_csv(path: &Path, rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    for r in rows {
        w.write_record(r).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    w.flush()?;
    Ok(())
}

/// Loads the config, runs `command` and writes all artifacts under `out_dir`.
/// Returns whether every verdict passed.
pub fn execute(command: Command, config: &Path, out_dir: &Path, overrides: &[String]) -> Result<bool> {
    let start = Instant::now();
    let started = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let text = fs::read_to_string(config)?;
    let mut cfg = RunConfig::parse(&text)?;
    for o in overrides {
        cfg.apply_override(o)?;
    }
    fs::create_dir_all(out_dir)?;
    let out = match run(command, &cfg) {
        Ok(o) => o,
        Err(e) => {
            let mut o = RunOutput::new();
            o.push_error(command.name(), e);
            o
        }
    };
    for (name, rows) in &out.tables {
        write_csv(&out_dir.join(name), rows)?;
    }
    for (name, m) in &out.matrices {
        fs::write(out_dir.join(name), matrix_to_text(m))?;
    }
    let timing = json!({ "started_unix_s": started, "runtime_s": start.elapsed().as_secs_f64() });
    let report = report_json(command, &text, overrides, &cfg, &out, timing);
    let path: PathBuf = out_dir.join(format!("{}_{}.json", command.name(), cfg.tag()));
    fs::write(path, serde_json::to_string_pretty(&report).unwrap() + "\n")?;
    Ok(out.all_pass())
}
