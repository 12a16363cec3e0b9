use std::fs;
use std::path::{Path, PathBuf};

use gmt_core::beta::{glem_check, pq_gate, transfer_check, write_beta_csv, Beta, BetaKind, PlaneFamily, TransferConfig};
use gmt_core::bigpieces::{corona_to_bp2, EngineConfig};
use gmt_core::corona::{build_corona, trivial_corona, validate_corona, ApproximantCatalog, CoronaDecomposition};
use gmt_core::dyadic::{build_tree, validate_grid, DyadicTree};
use gmt_core::fixtures::{self, Scene};
use gmt_core::parabolic::{self, Grid, Lip112Graph, PurConfig, CLOUD_REACH};
use gmt_core::space::{regularity_check_with, RegularityOptions};
use gmt_core::{Error, Metric, Result, WeightedSet};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{
    Analysis, BetaKindArg, Cli, Command, GenArgs, GenKind, ParabolicArgs, ParabolicMode, Params, ReportArgs, RunArgs,
    RunConfig, Target,
};

pub struct Outcome {
    pub pass: bool,
}

impl Outcome {
    pub fn code(&self) -> u8 {
        if self.pass {
            0
        } else {
            2
        }
    }
}

pub fn error_code(e: &Error) -> u8 {
    if e.is_numeric() {
        4
    } else {
        3
    }
}

pub fn dispatch(cli: Cli) -> Result<Outcome> {
    let config = cli.resolved().map_err(Error::InvalidInput)?;
    if let Some(j) = config.jobs {
        if j == 0 {
            return Err(Error::invalid("--jobs must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .map_err(|e| Error::invalid(e.to_string()))?;
    }
    let report = cli.global.report.as_deref();
    match &config.command {
        Command::Gen(a) => emit(&config, report, gen(a, config.seed)),
        Command::Cubes(a) => single(&config, report, a, Target::Cubes),
        Command::Beta(a) => single(&config, report, a, Target::Beta),
        Command::Glem(a) => single(&config, report, a, Target::Glem),
        Command::Corona(a) => single(&config, report, a, Target::Corona),
        Command::Bp2(a) => single(&config, report, a, Target::Bp2),
        Command::Transfer(a) => single(&config, report, a, Target::Transfer),
        Command::Parabolic(a) => emit(&config, report, parabolic(a, &config)),
        Command::Report(a) => collect(a, report),
        Command::Run(a) => run(&config, report, a),
    }
}

/// Writes the report envelope and turns the verdict into an outcome.
fn emit(config: &RunConfig, report: Option<&Path>, result: Result<(Value, bool)>) -> Result<Outcome> {
    let (value, pass) = result?;
    let envelope = json!({
        "config": config,
        "verdict": verdict(pass),
        "result": value,
    });
    write_report(report, &envelope)?;
    Ok(Outcome { pass })
}

fn verdict(pass: bool) -> &'static str {
    if pass {
        "pass"
    } else {
        "fail"
    }
}

fn write_report(path: Option<&Path>, value: &Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            fs::write(p, text)?;
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn to_value<T: Serialize>(v: &T) -> Result<Value> {
    Ok(serde_json::to_value(v)?)
}

fn validate(p: &Params) -> Result<()> {
    let checks = [
        (p.eta > 0.0, "--eta must be positive"),
        (p.big_k > 1.0, "--K must exceed 1"),
        (p.theta > 0.0 && p.theta <= 1.0, "--theta must lie in (0, 1]"),
        (p.epsilon > 0.0, "--epsilon must be positive"),
        (p.p > 0.0, "--p must be positive"),
        (p.q > 0.0, "--q must be positive"),
        (p.bound >= 0.0, "--bound must be non-negative"),
        (p.pack_cap > 0.0, "--pack-cap must be positive"),
        (p.constant_cap > 0.0, "--constant-cap must be positive"),
        (p.c2 >= 10.0, "--c2 must be at least 10"),
        (p.max_centers > 0, "--max-centers must be positive"),
        (p.d.map_or(true, |d| d > 0.0), "--d must be positive"),
    ];
    match checks.iter().find(|(ok, _)| !ok) {
        Some((_, msg)) => Err(Error::invalid(*msg)),
        None => Ok(()),
    }
}

fn load(stem: &Path, p: &Params) -> Result<WeightedSet> {
    let set = WeightedSet::read(stem)?;
    if p.d.is_none() && p.r_min.is_none() && p.r_max.is_none() {
        return Ok(set);
    }
    let (lo, hi) = set.scale_range();
    WeightedSet::new(
        set.metric(),
        set.coords().to_vec(),
        set.weights().to_vec(),
        p.d.unwrap_or(set.dim_d()),
        (p.r_min.unwrap_or(lo), p.r_max.unwrap_or(hi)),
    )
}

fn load_catalog(stems: &[PathBuf], p: &Params) -> Result<ApproximantCatalog> {
    if stems.is_empty() {
        return Err(Error::invalid("this stage needs --catalog"));
    }
    let sets = stems.iter().map(|s| WeightedSet::read(s)).collect::<Result<Vec<_>>>()?;
    ApproximantCatalog::with_options(
        sets,
        &RegularityOptions {
            max_centers: Some(p.max_centers),
            ..Default::default()
        },
    )
}

fn family(set: &WeightedSet, spec: Option<&str>) -> Result<PlaneFamily> {
    let Some(spec) = spec else {
        return Ok(match set.metric() {
            Metric::Parabolic { n } => PlaneFamily::parabolic(n),
            Metric::Euclidean { n } => {
                let k = set.dim_d().round();
                if (set.dim_d() - k).abs() > 1e-9 || k < 1.0 || k as usize >= n {
                    return Err(Error::invalid(format!(
                        "no default plane family for d = {} in R^{n}; pass --family",
                        set.dim_d()
                    )));
                }
                PlaneFamily::affine(n, k as usize)
            }
        });
    };
    let bad = || Error::invalid(format!("family {spec:?}: expected affine:N,K or parabolic:N"));
    let (name, args) = spec.split_once(':').ok_or_else(bad)?;
    let nums: Vec<usize> = args
        .split(',')
        .map(|s| s.trim().parse().map_err(|_| bad()))
        .collect::<Result<_>>()?;
    match (name, nums.as_slice()) {
        ("affine", [n, k]) => Ok(PlaneFamily::affine(*n, *k)),
        ("parabolic", [n]) => Ok(PlaneFamily::parabolic(*n)),
        _ => Err(bad()),
    }
}

fn beta_kind(k: BetaKindArg) -> BetaKind {
    match k {
        BetaKindArg::Lq => BetaKind::Lq,
        BetaKindArg::Sup => BetaKind::Sup,
        BetaKindArg::Bilateral => BetaKind::Bilateral,
    }
}

/// Loaded inputs shared by the stages of one run.
struct Context<'a> {
    args: &'a Analysis,
    fail_fast: bool,
    tree: DyadicTree,
    catalog: Option<ApproximantCatalog>,
    corona: Option<CoronaDecomposition>,
}

impl<'a> Context<'a> {
    fn new(args: &'a Analysis, fail_fast: bool) -> Result<Self> {
        validate(&args.params)?;
        let set = load(&args.input, &args.params)?;
        let tree = build_tree(&set)?;
        Ok(Context {
            args,
            fail_fast,
            tree,
            catalog: None,
            corona: None,
        })
    }

    fn params(&self) -> &Params {
        &self.args.params
    }

    fn catalog(&mut self) -> Result<&ApproximantCatalog> {
        self.load_catalog()?;
        Ok(self.catalog.as_ref().unwrap())
    }

    fn load_catalog(&mut self) -> Result<()> {
        if self.catalog.is_none() {
            self.catalog = Some(load_catalog(&self.args.catalog, &self.args.params)?);
        }
        Ok(())
    }

    fn family(&self) -> Result<PlaneFamily> {
        family(self.tree.set(), self.params().family.as_deref())
    }

    fn corona(&mut self) -> Result<CoronaDecomposition> {
        if let Some(c) = &self.corona {
            return Ok(c.clone());
        }
        let p = self.args.params.clone();
        let c = if let Some(path) = &p.corona {
            CoronaDecomposition::from_json(&fs::read_to_string(path)?)?
        } else if let Some(a) = p.trivial {
            let catalog = self.catalog()?;
            if a >= catalog.len() {
                return Err(Error::invalid(format!("--trivial {a} but the catalog has {} sets", catalog.len())));
            }
            trivial_corona(&self.tree, a, p.eta, p.big_k)
        } else {
            let catalog = load_catalog(&self.args.catalog, &p)?;
            let c = build_corona(&self.tree, &catalog, p.eta, p.big_k, p.pack_cap)?;
            self.catalog = Some(catalog);
            c
        };
        self.corona = Some(c.clone());
        Ok(c)
    }

    /// Artifact path: `out/name` when `out` is a directory (or absent from
    /// disk without an extension), else `out` itself.
    fn artifact(&self, name: &str) -> Result<Option<PathBuf>> {
        let Some(out) = &self.args.out else { return Ok(None) };
        let as_dir = out.is_dir() || out.extension().is_none();
        let path = if as_dir {
            fs::create_dir_all(out)?;
            out.join(name)
        } else {
            out.clone()
        };
        Ok(Some(path))
    }

    fn stage(&mut self, target: Target) -> Result<(Value, bool)> {
        match target {
            Target::Cubes => self.cubes(),
            Target::Beta => self.beta(),
            Target::Glem => self.glem(),
            Target::Corona => self.corona_stage(),
            Target::Bp2 => self.bp2(),
            Target::Transfer => self.transfer(),
        }
    }

    fn cubes(&mut self) -> Result<(Value, bool)> {
        let consts = validate_grid(&self.tree)?;
        if let Some(path) = self.artifact("tree.jsonl")? {
            self.tree.write_jsonl(fs::File::create(&path)?)?;
            self.tree.write_members_csv(fs::File::create(path.with_extension("members.csv"))?)?;
        }
        let value = json!({
            "cubes": self.tree.len(),
            "points": self.tree.set().len(),
            "k_min": self.tree.k_min(),
            "k_max": self.tree.k_max(),
            "roots": self.tree.roots().len(),
            "a0": consts.a0,
            "c1": consts.c1,
        });
        Ok((value, true))
    }

    fn beta(&mut self) -> Result<(Value, bool)> {
        let fam = self.family()?;
        let p = self.params();
        let kind = beta_kind(p.kind);
        let values = Beta::new(&self.tree, &fam)?.table(kind, p.q)?;
        if let Some(path) = self.artifact("beta.csv")? {
            write_beta_csv(&self.tree, &values, fs::File::create(path)?)?;
        }
        let max = values.iter().map(|v| v.value).fold(0.0, f64::max);
        let mean = values.iter().map(|v| v.value).sum::<f64>() / values.len().max(1) as f64;
        let value = json!({
            "family": fam.name(),
            "kind": kind,
            "q": if p.q.is_finite() { json!(p.q) } else { json!("inf") },
            "cubes": values.len(),
            "max": max,
            "mean": mean,
            "heuristic": values.iter().any(|v| v.heuristic),
        });
        Ok((value, true))
    }

    fn glem(&mut self) -> Result<(Value, bool)> {
        let fam = self.family()?;
        let p = self.params();
        let gate = pq_gate(p.p, p.q, self.tree.set().dim_d())?;
        let r = glem_check(&self.tree, &fam, p.p, p.q, p.bound)?;
        let pass = r.pass;
        let mut value = to_value(&r)?;
        value["gate"] = json!(gate);
        value["family"] = json!(fam.name());
        Ok((value, pass))
    }

    fn corona_stage(&mut self) -> Result<(Value, bool)> {
        let c = self.corona()?;
        self.load_catalog()?;
        let report = validate_corona(&c, &self.tree, self.catalog.as_ref().unwrap(), false)?;
        if let Some(path) = self.artifact("corona.json")? {
            fs::write(path, c.to_json()? + "\n")?;
        }
        let pass = report.pass;
        let mut value = to_value(&report)?;
        value["regimes"] = json!(c.regimes.len());
        value["bad"] = json!(c.bad.len());
        value["packing_constant"] = json!(c.packing_constant);
        Ok((value, pass))
    }

    fn bp2(&mut self) -> Result<(Value, bool)> {
        let c = self.corona()?;
        let cfg = EngineConfig {
            max_centers: self.params().max_centers,
            fail_fast: self.fail_fast,
            ..EngineConfig::default()
        };
        self.load_catalog()?;
        let cert = corona_to_bp2(&self.tree, &c, self.catalog.as_ref().unwrap(), &cfg)?;
        if let Some(path) = self.artifact("bp2.json")? {
            fs::write(path, cert.to_json()? + "\n")?;
        }
        let value = json!({
            "theta_prime": cert.theta_prime,
            "roots": cert.roots,
            "cubes": cert.cubes.len(),
            "rungs": cert.rungs,
            "violations": cert.violations,
            "pass": cert.pass,
        });
        Ok((value, cert.pass))
    }

    fn transfer(&mut self) -> Result<(Value, bool)> {
        let fam = self.family()?;
        let p = self.args.params.clone();
        let cfg = TransferConfig {
            p: p.p,
            q: p.q,
            eps: p.epsilon,
            theta: p.theta,
            c2: p.c2,
            constant_cap: p.constant_cap,
            glem_bound: p.bound,
            weak_bound: p.bound,
        };
        self.load_catalog()?;
        let r = transfer_check(&self.tree, self.catalog.as_ref().unwrap(), &fam, &cfg)?;
        if let Some(path) = self.artifact("transfer.json")? {
            fs::write(path, r.to_json()? + "\n")?;
        }
        let value = json!({
            "family": r.family,
            "gate": r.gate,
            "eligible_cubes": r.cubes.len(),
            "constant_q": r.constant_q,
            "constant_inf": r.constant_inf,
            "constant_b": r.constant_b,
            "i_carleson": r.i_carleson,
            "glem": r.glem,
            "wglem": r.wglem,
            "bwglem": r.bwglem,
            "roots": r.roots,
            "pass": r.pass,
        });
        Ok((value, r.pass))
    }
}

fn single(config: &RunConfig, report: Option<&Path>, a: &Analysis, target: Target) -> Result<Outcome> {
    let mut ctx = Context::new(a, config.fail_fast)?;
    let result = ctx.stage(target);
    emit(config, report, result)
}

fn prerequisites(target: Target) -> Vec<Target> {
    use Target::*;
    let chain: &[Target] = match target {
        Cubes => &[Cubes],
        Beta => &[Cubes, Beta],
        Glem => &[Cubes, Beta, Glem],
        Corona => &[Cubes, Corona],
        Bp2 => &[Cubes, Corona, Bp2],
        Transfer => &[Cubes, Beta, Corona, Bp2, Transfer],
    };
    chain.to_vec()
}

/// Runs the chain up to the target. The report is written even when a stage
/// errors; the exit code is that of the first failing stage.
fn run(config: &RunConfig, report: Option<&Path>, a: &RunArgs) -> Result<Outcome> {
    let report_path = report
        .map(Path::to_path_buf)
        .or_else(|| a.analysis.out.as_ref().map(|o| o.join("report.json")));
    let mut stages = Vec::new();
    let mut failure: Option<Error> = None;
    let mut pass = true;
    match Context::new(&a.analysis, config.fail_fast) {
        Err(e) => {
            stages.push(json!({"stage": "input", "verdict": "error", "error": e.to_string()}));
            failure = Some(e);
        }
        Ok(mut ctx) => {
            for t in prerequisites(a.target) {
                match ctx.stage(t) {
                    Ok((value, ok)) => {
                        stages.push(json!({"stage": t, "verdict": verdict(ok), "result": value}));
                        pass &= ok;
                        if !ok && config.fail_fast {
                            break;
                        }
                    }
                    Err(e) => {
                        stages.push(json!({"stage": t, "verdict": "error", "error": e.to_string()}));
                        failure = Some(e);
                        break;
                    }
                }
            }
        }
    }
    let overall = if failure.is_some() { "error" } else { verdict(pass) };
    let envelope = json!({"config": config, "verdict": overall, "stages": stages});
    write_report(report_path.as_deref(), &envelope)?;
    match failure {
        Some(e) => Err(e),
        None => Ok(Outcome { pass }),
    }
}

fn collect(a: &ReportArgs, report: Option<&Path>) -> Result<Outcome> {
    let mut files: Vec<PathBuf> = fs::read_dir(&a.dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    let mut rows = Vec::new();
    for f in &files {
        let Ok(v) = serde_json::from_str::<Value>(&fs::read_to_string(f)?) else { continue };
        if let Some(verdict) = v.get("verdict").and_then(Value::as_str) {
            rows.push(json!({"file": f.file_name().map(|n| n.to_string_lossy()), "verdict": verdict}));
        }
    }
    if rows.is_empty() {
        return Err(Error::invalid(format!("no reports in {}", a.dir.display())));
    }
    let pass = rows.iter().all(|r| r["verdict"] == "pass");
    write_report(report, &json!({"verdict": verdict(pass), "reports": rows}))?;
    Ok(Outcome { pass })
}

fn write_scene(scene: &Scene, dir: &Path) -> Result<Vec<String>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    scene.set.write(&dir.join("set"))?;
    written.push(dir.join("set").display().to_string());
    for (i, s) in scene.catalog.iter().enumerate() {
        let stem = dir.join(format!("catalog_{i}"));
        s.write(&stem)?;
        written.push(stem.display().to_string());
    }
    Ok(written)
}

fn bump_graph(n: usize, resolution: usize) -> Result<Lip112Graph> {
    Lip112Graph::from_fn(Grid::unit(n, resolution)?, |x, t| {
        0.3 * x.iter().map(|&v| parabolic::bump(v)).product::<f64>() * parabolic::bump(t)
    })
}

fn gen(a: &GenArgs, seed: u64) -> Result<(Value, bool)> {
    let scene = match a.kind {
        GenKind::LineScene => Some(fixtures::line_scene(a.h)?),
        GenKind::TwoLinesScene => Some(fixtures::two_lines_scene(a.h, a.sep)?),
        GenKind::StaircaseScene => Some(fixtures::staircase_scene(a.h, a.lambda, a.step)?),
        GenKind::TeethScene => Some(fixtures::teeth_scene(a.h, a.lambda, a.tooth)?),
        GenKind::GraphScene => Some(parabolic::graph_scene(a.nodes)?),
        GenKind::TwoGraphsScene => Some(parabolic::two_graphs_scene(a.nodes, Some(a.sep))?),
        _ => None,
    };
    let mut extra = json!({});
    let (set, written) = match scene {
        Some(s) => {
            let written = write_scene(&s, &a.out)?;
            (s.set, written)
        }
        None => {
            let set = match a.kind {
                GenKind::Plane => fixtures::plane(a.n, a.k, a.side, a.h)?,
                GenKind::Lipschitz => fixtures::lipschitz_graph(a.lambda, a.tooth, a.side, a.h)?,
                GenKind::TwoPlanes => fixtures::two_planes(a.n, a.k, a.side, a.h, a.sep)?,
                GenKind::Gpg | GenKind::LewisSilver => {
                    let graph = if a.kind == GenKind::Gpg {
                        bump_graph(a.n, a.resolution)?
                    } else {
                        parabolic::lewis_silver_graph(a.n, a.c, a.resolution, seed)?
                    };
                    graph.psi.write_csv(fs::File::create(a.out.with_extension("psi.csv"))?)?;
                    extra = json!({"lip_constant_b": graph.lip_constant_b});
                    graph.cloud(CLOUD_REACH)?
                }
                _ => unreachable!(),
            };
            if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            set.write(&a.out)?;
            (set, vec![a.out.display().to_string()])
        }
    };
    let reg = regularity_check_with(
        &set,
        &RegularityOptions {
            max_centers: Some(256),
            ..Default::default()
        },
    )?;
    let value = json!({
        "kind": a.kind,
        "points": set.len(),
        "metric": set.metric().name(),
        "d": set.dim_d(),
        "scale_range": set.scale_range(),
        "regularity_constant": reg.constant_c,
        "written": written,
        "graph": extra,
    });
    Ok((value, true))
}

fn parabolic(a: &ParabolicArgs, config: &RunConfig) -> Result<(Value, bool)> {
    validate(&a.params)?;
    if a.eps.iter().any(|&e| !(e > 0.0)) {
        return Err(Error::invalid("--eps values must be positive"));
    }
    match a.mode {
        ParabolicMode::Gpg => {
            let graph = if a.lewis_silver {
                parabolic::lewis_silver_graph(a.n, a.c, a.resolution, config.seed)?
            } else {
                bump_graph(a.n, a.resolution)?
            };
            if let Some(path) = &a.psi {
                graph.psi.write_csv(fs::File::create(path)?)?;
            }
            let v = parabolic::gpg_check(&graph, a.b1_cap, a.b2_cap)?;
            Ok((to_value(&v)?, v.pass))
        }
        ParabolicMode::Observe => {
            let graph = parabolic::lewis_silver_graph(a.n, a.c, a.resolution, config.seed)?;
            let (tree, cubes) = parabolic::observed_tree(&graph)?;
            let r = parabolic::observation_check(&tree, &cubes, &a.eps)?;
            Ok((to_value(&r)?, r.pass))
        }
        ParabolicMode::Sweep => {
            let points = parabolic::lewis_silver_sweep(a.n, a.c, &a.resolutions, config.seed)?;
            let growing = points.windows(2).all(|w| w[1].glem > w[0].glem);
            Ok((json!({"points": points, "glem_growing": growing}), growing))
        }
        ParabolicMode::Pipeline => {
            let input = a.input.as_ref().ok_or_else(|| Error::invalid("pipeline needs --input"))?;
            let set = load(input, &a.params)?;
            let catalog = load_catalog(&a.catalog, &a.params)?;
            let p = &a.params;
            let cfg = PurConfig {
                eta: p.eta,
                big_k: p.big_k,
                pack_cap: p.pack_cap,
                transfer: TransferConfig {
                    eps: p.epsilon,
                    theta: p.theta,
                    c2: p.c2,
                    constant_cap: p.constant_cap,
                    glem_bound: p.bound,
                    weak_bound: p.bound,
                    ..TransferConfig::default()
                },
                engine: EngineConfig {
                    max_centers: p.max_centers,
                    fail_fast: config.fail_fast,
                    ..EngineConfig::default()
                },
                eps: a.eps.clone(),
                weak_bound: p.bound,
                max_centers: p.max_centers,
                ..PurConfig::default()
            };
            let corona = match (&p.corona, p.trivial) {
                (Some(path), _) => Some(CoronaDecomposition::from_json(&fs::read_to_string(path)?)?),
                (None, Some(i)) => Some(trivial_corona(&build_tree(&set)?, i, p.eta, p.big_k)),
                _ => None,
            };
            let r = parabolic::pur_pipeline(&set, &catalog, corona.as_ref(), &cfg)?;
            Ok((to_value(&r)?, r.pass))
        }
    }
}
