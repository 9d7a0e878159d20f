//! Run configuration as flat `key = value` text with dotted sections, and the
//! region expression grammar used by `test.*` keys.
//!
//! ```text
//! tail.kind = pareto
//! tail.alpha = 3
//! tail.dim = 2
//! plan.k = 1
//! plan.p = 3
//! plan.m = 1
//! plan.n = 1e4
//! run.trials = 1000
//! test.a = inset(rect(0.2, 1.0, 0.3, 1.3) & delta(1, 3), 0.02)
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crackle_core::limits::RegionSpec;
use crackle_core::model::{Regime, ScalingPlan, TailModel};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TailSpec {
    Pareto { alpha: f64 },
    VonMises { tau: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub tail: TailSpec,
    pub dim: usize,
    pub k: usize,
    pub p: usize,
    pub m_scale: f64,
    /// One entry per rung; a single value for `plan.n`.
    pub n_ladder: Vec<f64>,
    pub regime: Regime,
    pub trials: u64,
    pub seed: u64,
    /// Zero lets the thread pool decide.
    pub threads: usize,
    /// Refuse runs whose expected point count per cloud exceeds this.
    pub max_points: u64,
    pub m_cap: usize,
    /// Named test regions, kept as source text.
    pub tests: BTreeMap<String, String>,
    pub coverage: Option<CoverageSpec>,
    pub lifespan: Option<LifespanSpec>,
    pub mc_samples: u64,
    pub mc_max_samples: u64,
    pub mc_rel_target: f64,
    pub mc_seed: u64,
    pub output_dir: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageSpec {
    pub region: String,
    pub eps: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LifespanSpec {
    pub t: f64,
    pub delta: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            tail: TailSpec::Pareto { alpha: 3.0 },
            dim: 2,
            k: 1,
            p: 3,
            m_scale: 1.0,
            n_ladder: vec![1e4],
            regime: Regime::Critical,
            trials: 100,
            seed: 1,
            threads: 0,
            max_points: 50_000_000,
            m_cap: crackle_core::ph::DEFAULT_M_CAP,
            tests: BTreeMap::new(),
            coverage: None,
            lifespan: None,
            mc_samples: 65_536,
            mc_max_samples: 16_777_216,
            mc_rel_target: 0.05,
            mc_seed: 11,
            output_dir: "out".into(),
        }
    }
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| bad(format!("{key}: cannot parse {v:?}")))
}

/// Integers may be written in scientific notation (`1e6`) as long as they are exact.
fn parse_count(key: &str, v: &str) -> Result<u64> {
    if let Ok(x) = v.parse::<u64>() {
        return Ok(x);
    }
    let x: f64 = parse_num(key, v)?;
    if x >= 0.0 && x.fract() == 0.0 && x < u64::MAX as f64 {
        Ok(x as u64)
    } else {
        Err(bad(format!("{key}: expected a non-negative integer, got {v:?}")))
    }
}

impl RunConfig {
    pub fn tail_model(&self) -> Result<TailModel> {
        Ok(match self.tail {
            TailSpec::Pareto { alpha } => TailModel::pareto(alpha, self.dim)?,
            TailSpec::VonMises { tau } => TailModel::von_mises_power(tau, self.dim)?,
        })
    }

    pub fn plans(&self) -> Result<Vec<ScalingPlan>> {
        let tail = self.tail_model()?;
        self.n_ladder
            .iter()
            .map(|&n| Ok(ScalingPlan::with_regime(tail, self.k, self.p, n, self.m_scale, self.regime)?))
            .collect()
    }

    /// Test regions in key order.
    pub fn test_regions(&self) -> Result<Vec<(String, RegionSpec)>> {
        self.tests.iter().map(|(name, src)| Ok((name.clone(), parse_region(src)?))).collect()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Parse { line, message, .. } => Error::parse(path, line, message),
            other => other,
        })
    }

    /// Parses `key = value` lines. Blank lines and `#` comments are skipped;
    /// unknown or repeated keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = RunConfig::default();
        let mut seen = std::collections::BTreeSet::new();
        let mut tail_kind: Option<String> = None;
        let mut alpha = None;
        let mut tau = None;
        let mut n = None;
        let mut ladder = None;
        let mut regime: Option<String> = None;
        let mut kappa = None;
        let mut cov_region = None;
        let mut cov_eps = None;
        let mut cov_threshold = None;
        let mut life_t = None;
        let mut life_delta = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let lineno = i + 1;
            let perr = |m: String| Error::parse("<config>", lineno, m);
            let (key, value) = line.split_once('=').ok_or_else(|| perr("expected key = value".into()))?;
            let (key, v) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(perr(format!("duplicate key {key}")));
            }
            let wrap = |e: Error| match e {
                Error::Config(m) => perr(m),
                other => other,
            };
            let res: Result<()> = (|| {
                match key {
                    "tail.kind" => tail_kind = Some(v.to_string()),
                    "tail.alpha" => alpha = Some(parse_num::<f64>(key, v)?),
                    "tail.tau" => tau = Some(parse_num::<f64>(key, v)?),
                    "tail.dim" => c.dim = parse_count(key, v)? as usize,
                    "plan.k" => c.k = parse_count(key, v)? as usize,
                    "plan.p" => c.p = parse_count(key, v)? as usize,
                    "plan.m" => c.m_scale = parse_num(key, v)?,
                    "plan.n" => n = Some(parse_num::<f64>(key, v)?),
                    "plan.n_ladder" => {
                        ladder = Some(v.split(',').map(|s| parse_num::<f64>(key, s.trim())).collect::<Result<Vec<_>>>()?)
                    }
                    "plan.regime" => regime = Some(v.to_string()),
                    "plan.kappa" => kappa = Some(parse_num::<f64>(key, v)?),
                    "run.trials" => c.trials = parse_count(key, v)?,
                    "run.seed" => c.seed = parse_count(key, v)?,
                    "run.threads" => c.threads = parse_count(key, v)? as usize,
                    "run.max_points" => c.max_points = parse_count(key, v)?,
                    "run.m_cap" => c.m_cap = parse_count(key, v)? as usize,
                    "coverage.region" => {
                        parse_region(v)?;
                        cov_region = Some(v.to_string());
                    }
                    "coverage.eps" => cov_eps = Some(parse_num::<f64>(key, v)?),
                    "coverage.threshold" => cov_threshold = Some(parse_num::<f64>(key, v)?),
                    "lifespan.t" => life_t = Some(parse_num::<f64>(key, v)?),
                    "lifespan.delta" => life_delta = Some(parse_num::<f64>(key, v)?),
                    "mc.samples" => c.mc_samples = parse_count(key, v)?,
                    "mc.max_samples" => c.mc_max_samples = parse_count(key, v)?,
                    "mc.rel_target" => c.mc_rel_target = parse_num(key, v)?,
                    "mc.seed" => c.mc_seed = parse_count(key, v)?,
                    "output.dir" => c.output_dir = v.to_string(),
                    _ => match key.strip_prefix("test.") {
                        Some(name) if valid_name(name) => {
                            parse_region(v)?;
                            c.tests.insert(name.to_string(), v.to_string());
                        }
                        _ => return Err(bad(format!("unknown key {key}"))),
                    },
                }
                Ok(())
            })();
            res.map_err(wrap)?;
        }
        c.tail = match tail_kind.as_deref().unwrap_or("pareto") {
            "pareto" => {
                if tau.is_some() {
                    return Err(bad("tail.tau does not apply to a pareto tail"));
                }
                TailSpec::Pareto { alpha: alpha.unwrap_or(3.0) }
            }
            "von_mises" => {
                if alpha.is_some() {
                    return Err(bad("tail.alpha does not apply to a von_mises tail"));
                }
                TailSpec::VonMises { tau: tau.unwrap_or(1.0) }
            }
            other => return Err(bad(format!("tail.kind: unknown kind {other:?}"))),
        };
        c.n_ladder = match (n, ladder) {
            (Some(_), Some(_)) => return Err(bad("give either plan.n or plan.n_ladder")),
            (Some(n), None) => vec![n],
            (None, Some(l)) => l,
            (None, None) => c.n_ladder,
        };
        c.regime = match (regime.as_deref().unwrap_or("critical"), kappa) {
            ("critical", None) => Regime::Critical,
            ("critical", Some(_)) => return Err(bad("plan.kappa needs plan.regime = subcritical")),
            ("subcritical", Some(kappa)) => Regime::Subcritical { kappa },
            ("subcritical", None) => return Err(bad("plan.regime = subcritical needs plan.kappa")),
            (other, _) => return Err(bad(format!("plan.regime: unknown regime {other:?}"))),
        };
        c.coverage = match (cov_region, cov_eps, cov_threshold) {
            (None, None, None) => None,
            (Some(region), eps, threshold) => {
                Some(CoverageSpec { region, eps: eps.unwrap_or(0.05), threshold: threshold.unwrap_or(0.95) })
            }
            _ => return Err(bad("coverage.* keys need coverage.region")),
        };
        c.lifespan = match (life_t, life_delta) {
            (None, None) => None,
            (Some(t), delta) => Some(LifespanSpec { t, delta: delta.unwrap_or(0.1) }),
            _ => return Err(bad("lifespan.delta needs lifespan.t")),
        };
        c.validate()?;
        Ok(c)
    }

    fn validate(&self) -> Result<()> {
        if self.k < 1 || self.p < self.k + 2 {
            return Err(bad("need plan.k >= 1 and plan.p >= plan.k + 2"));
        }
        if self.n_ladder.is_empty() || self.n_ladder.iter().any(|n| !(*n > 0.0 && n.is_finite())) {
            return Err(bad("plan.n must be positive and finite"));
        }
        if !(self.m_scale > 0.0) {
            return Err(bad("plan.m must be positive"));
        }
        if self.trials == 0 {
            return Err(bad("run.trials must be at least 1"));
        }
        if !(self.mc_rel_target > 0.0) {
            return Err(bad("mc.rel_target must be positive"));
        }
        self.tail_model()?;
        Ok(())
    }

    /// Canonical text; `parse(to_text(c)) == c`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").unwrap();
        match self.tail {
            TailSpec::Pareto { alpha } => {
                kv("tail.kind", "pareto".into());
                kv("tail.alpha", alpha.to_string());
            }
            TailSpec::VonMises { tau } => {
                kv("tail.kind", "von_mises".into());
                kv("tail.tau", tau.to_string());
            }
        }
        kv("tail.dim", self.dim.to_string());
        kv("plan.k", self.k.to_string());
        kv("plan.p", self.p.to_string());
        kv("plan.m", self.m_scale.to_string());
        if self.n_ladder.len() == 1 {
            kv("plan.n", self.n_ladder[0].to_string());
        } else {
            kv("plan.n_ladder", self.n_ladder.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(", "));
        }
        match self.regime {
            Regime::Critical => kv("plan.regime", "critical".into()),
            Regime::Subcritical { kappa } => {
                kv("plan.regime", "subcritical".into());
                kv("plan.kappa", kappa.to_string());
            }
        }
        kv("run.trials", self.trials.to_string());
        kv("run.seed", self.seed.to_string());
        kv("run.threads", self.threads.to_string());
        kv("run.max_points", self.max_points.to_string());
        kv("run.m_cap", self.m_cap.to_string());
        for (name, src) in &self.tests {
            kv(&format!("test.{name}"), src.clone());
        }
        if let Some(cov) = &self.coverage {
            kv("coverage.region", cov.region.clone());
            kv("coverage.eps", cov.eps.to_string());
            kv("coverage.threshold", cov.threshold.to_string());
        }
        if let Some(l) = &self.lifespan {
            kv("lifespan.t", l.t.to_string());
            kv("lifespan.delta", l.delta.to_string());
        }
        kv("mc.samples", self.mc_samples.to_string());
        kv("mc.max_samples", self.mc_max_samples.to_string());
        kv("mc.rel_target", self.mc_rel_target.to_string());
        kv("mc.seed", self.mc_seed.to_string());
        kv("output.dir", self.output_dir.clone());
        s
    }
}

fn valid_name(name: &str) -> bool {
    !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Parses a region expression.
///
/// ```text
/// expr   := term ('|' term)*
/// term   := factor ('&' factor)*
/// factor := '(' expr ')' | delta | delta(k, m) | b(k, m) | rect(x0, x1, y0, y1)
///         | i(t) | j(t, k, p) | life(l) | inset(expr, margin) | env(expr, eps)
/// ```
pub fn parse_region(src: &str) -> Result<RegionSpec> {
    let mut p = RegionParser { s: src.as_bytes(), pos: 0, src };
    let e = p.expr()?;
    p.ws();
    if p.pos != p.s.len() {
        return Err(p.err("unexpected trailing input"));
    }
    Ok(e)
}

struct RegionParser<'a> {
    s: &'a [u8],
    pos: usize,
    src: &'a str,
}

impl RegionParser<'_> {
    fn err(&self, msg: &str) -> Error {
        bad(format!("region {:?}: {msg} at column {}", self.src, self.pos + 1))
    }

    fn ws(&mut self) {
        while self.pos < self.s.len() && self.s[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn eat(&mut self, c: u8) -> bool {
        self.ws();
        if self.s.get(self.pos) == Some(&c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: u8) -> Result<()> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(self.err(&format!("expected '{}'", c as char)))
        }
    }

    fn expr(&mut self) -> Result<RegionSpec> {
        let mut parts = vec![self.term()?];
        while self.eat(b'|') {
            parts.push(self.term()?);
        }
        Ok(if parts.len() == 1 { parts.pop().unwrap() } else { RegionSpec::Union(parts) })
    }

    fn term(&mut self) -> Result<RegionSpec> {
        let mut parts = vec![self.factor()?];
        while self.eat(b'&') {
            parts.push(self.factor()?);
        }
        Ok(if parts.len() == 1 { parts.pop().unwrap() } else { RegionSpec::Intersection(parts) })
    }

    fn ident(&mut self) -> Result<&str> {
        self.ws();
        let start = self.pos;
        while self.pos < self.s.len() && (self.s[self.pos].is_ascii_alphabetic() || self.s[self.pos] == b'_') {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err("expected a region"));
        }
        Ok(&self.src[start..self.pos])
    }

    fn number(&mut self) -> Result<f64> {
        self.ws();
        let start = self.pos;
        while self.pos < self.s.len() && !matches!(self.s[self.pos], b',' | b')') && !self.s[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        self.src[start..self.pos].parse().map_err(|_| {
            self.pos = start;
            self.err("expected a number")
        })
    }

    fn index(&mut self) -> Result<usize> {
        let x = self.number()?;
        if x >= 0.0 && x.fract() == 0.0 {
            Ok(x as usize)
        } else {
            Err(self.err("expected a non-negative integer"))
        }
    }

    fn factor(&mut self) -> Result<RegionSpec> {
        if self.eat(b'(') {
            let e = self.expr()?;
            self.expect(b')')?;
            return Ok(e);
        }
        let name = self.ident()?.to_string();
        let spec = match name.as_str() {
            "delta" => {
                if !self.eat(b'(') {
                    return Ok(RegionSpec::Delta);
                }
                let k = self.index()?;
                self.expect(b',')?;
                let m = self.index()?;
                RegionSpec::DeltaKM { k, m }
            }
            "b" => {
                self.expect(b'(')?;
                let k = self.index()?;
                self.expect(b',')?;
                let m = self.index()?;
                RegionSpec::BKM { k, m }
            }
            "rect" => {
                self.expect(b'(')?;
                let mut v = [0.0; 4];
                for (i, x) in v.iter_mut().enumerate() {
                    if i > 0 {
                        self.expect(b',')?;
                    }
                    *x = self.number()?;
                }
                RegionSpec::Rect { x0: v[0], x1: v[1], y0: v[2], y1: v[3] }
            }
            "i" => {
                self.expect(b'(')?;
                RegionSpec::IT { t: self.number()? }
            }
            "life" => {
                self.expect(b'(')?;
                RegionSpec::MinLifespan { l: self.number()? }
            }
            "j" => {
                self.expect(b'(')?;
                let t = self.number()?;
                self.expect(b',')?;
                let k = self.index()?;
                self.expect(b',')?;
                let p = self.index()?;
                RegionSpec::JT { t, k, p }
            }
            "inset" | "env" => {
                self.expect(b'(')?;
                let inner = Box::new(self.expr()?);
                self.expect(b',')?;
                let x = self.number()?;
                if name == "inset" {
                    RegionSpec::Inset { region: inner, margin: x }
                } else {
                    RegionSpec::Envelope { region: inner, eps: x }
                }
            }
            _ => return Err(self.err(&format!("unknown region {name:?}"))),
        };
        self.expect(b')')?;
        Ok(spec)
    }
}
