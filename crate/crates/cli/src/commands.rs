use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::PathBuf;

use anyhow::bail;
use serde::{Deserialize, Serialize};
use serde_json::json;

use cfmdp::solver::PolicyEntry;
use cfmdp::{
    build_cf_mdp, prune_cf_mdp, pruned_size_report, solve_km, CfMdp64, CfPolicy64, Error, LayeredKernel,
    Mdp64, PruneMode, PrunedCfMdp64, Sampler,
};

use crate::context::{read_json, Experiment};
use crate::output::{now, Manifest, OutDir};
use crate::{CfBuildCmd, EnvCmd, PruneCmd, RolloutCmd, SampleCmd, SolveCmd, SweepCmd};

/// Policy file written by `solve` and read by `rollout`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyExport {
    pub k: usize,
    pub m: usize,
    pub mode: PruneMode,
    pub horizon: usize,
    #[serde(rename = "V_s0")]
    pub value: f64,
    pub samples: usize,
    pub sampler: Sampler,
    pub seed: u64,
    pub mdp_hash: String,
    pub path_hash: String,
    pub entries: Vec<PolicyEntry>,
}

#[derive(Serialize)]
struct Successor {
    s: String,
    p: f64,
}

#[derive(Serialize)]
struct KernelRow {
    t: usize,
    s: String,
    a: String,
    to: Vec<Successor>,
}

#[derive(Serialize)]
struct Node {
    t: usize,
    s: String,
}

#[derive(Serialize)]
struct RolloutRow {
    t: usize,
    mean: f64,
    std: f64,
}

fn emit(out: Option<PathBuf>, name: &str, text: String) -> anyhow::Result<()> {
    match out {
        Some(dir) => {
            OutDir::create(&dir)?.write(name, text.as_bytes())?;
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            let written = stdout.write_all(text.as_bytes()).and_then(|_| stdout.write_all(b"\n"));
            match written {
                Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => {}
                other => other?,
            }
        }
    }
    Ok(())
}

pub fn env(c: EnvCmd) -> anyhow::Result<()> {
    let cfg = c.config.resolve(&c.name)?;
    let mdp: Mdp64 = cfg.build()?;
    let report = mdp.validate();
    if !report.is_empty() {
        return Err(Error::InvalidMdp(report).into());
    }
    emit(c.out, "mdp.json", mdp.to_json())
}

pub fn sample(c: SampleCmd) -> anyhow::Result<()> {
    let model = c.source.load()?;
    let horizon = model.horizon(&c.source.flags)?;
    let (path, _) = model.sample(c.policy.as_deref(), horizon, c.seed)?;
    emit(c.out, "path.json", serde_json::to_string_pretty(&path.to_doc(&model.mdp))?)
}

fn settings(exp: &Experiment, extra: serde_json::Value) -> serde_json::Value {
    let mut base = json!({
        "horizon": exp.horizon(),
        "samples": exp.posterior.key.n_samples,
        "sampler": exp.posterior.key.sampler,
        "mode": exp.mode,
    });
    if let (Some(b), serde_json::Value::Object(e)) = (base.as_object_mut(), extra) {
        b.extend(e);
    }
    base
}

pub fn cf_build(c: CfBuildCmd) -> anyhow::Result<()> {
    let started = now();
    let exp = Experiment::load(&c.source, &c.posterior)?;
    let mdp = &exp.model.mdp;
    let cf = build_cf_mdp(&exp.posterior, mdp, &exp.path);
    let mut rows = Vec::new();
    let mut frontier = BTreeSet::from([cf.root()]);
    for t in 0..exp.horizon() {
        let mut next = BTreeSet::new();
        for &s in &frontier {
            for a in mdp.available(s) {
                let d = cf.layer_row(t, s, a)?;
                next.extend(d.next.iter().copied());
                rows.push(KernelRow {
                    t,
                    s: mdp.state_name(s).into(),
                    a: mdp.action_name(a).into(),
                    to: d
                        .iter()
                        .map(|(n, p)| Successor { s: mdp.state_name(n).into(), p })
                        .collect(),
                });
            }
        }
        frontier = next;
    }
    let mut out = OutDir::create(&c.out)?;
    let mut bin = Vec::new();
    exp.posterior.write_to(&mut bin)?;
    out.write("posterior.bin", &bin)?;
    out.write_json(
        "cf_kernel.json",
        &json!({ "horizon": exp.horizon(), "root": mdp.state_name(cf.root()), "rows": rows }),
    )?;
    let extra = json!({ "kernel_rows": rows.len() });
    out.finish(Manifest::new("cf-build", started, &exp, cf.stats(), settings(&exp, extra)))
}

fn pruned_for(exp: &Experiment, cf: &CfMdp64, k: usize) -> anyhow::Result<PrunedCfMdp64> {
    exp.check_k(k)?;
    Ok(prune_cf_mdp(cf, &exp.path, k, exp.mode)?)
}

pub fn prune(c: PruneCmd) -> anyhow::Result<()> {
    let started = now();
    let exp = Experiment::load(&c.source, &c.posterior)?;
    let mdp = &exp.model.mdp;
    let cf = build_cf_mdp(&exp.posterior, mdp, &exp.path);
    let pruned = pruned_for(&exp, &cf, c.k)?;
    let nodes: Vec<Node> = pruned
        .nodes()
        .into_iter()
        .map(|(s, t)| (t, s))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .map(|(t, s)| Node { t, s: mdp.state_name(s).into() })
        .collect();
    let edges: Vec<KernelRow> = pruned
        .layers
        .iter()
        .enumerate()
        .flat_map(|(t, layer)| {
            layer.iter().flat_map(move |(&s, acts)| {
                acts.iter().map(move |(a, row)| KernelRow {
                    t,
                    s: mdp.state_name(s).into(),
                    a: mdp.action_name(*a).into(),
                    to: row
                        .iter()
                        .map(|(n, p)| Successor { s: mdp.state_name(n).into(), p })
                        .collect(),
                })
            })
        })
        .collect();
    let size = pruned_size_report(&pruned);
    let mut out = OutDir::create(&c.out)?;
    out.write_json(
        "pruned.json",
        &json!({
            "k": c.k,
            "mode": exp.mode,
            "horizon": pruned.horizon,
            "root": mdp.state_name(pruned.root),
            "nodes_all_layers": pruned.nodes_all_layers,
            "nodes": nodes,
            "rows": edges,
        }),
    )?;
    out.write_csv("sizes.csv", [size])?;
    out.finish(Manifest::new("prune", started, &exp, cf.stats(), settings(&exp, json!({ "k": c.k }))))
}

pub fn solve(c: SolveCmd) -> anyhow::Result<()> {
    let started = now();
    let exp = Experiment::load(&c.source, &c.posterior)?;
    exp.check_m(c.m)?;
    let mdp = &exp.model.mdp;
    let cf = build_cf_mdp(&exp.posterior, mdp, &exp.path);
    let pruned = pruned_for(&exp, &cf, c.k)?;
    let policy = solve_km(&pruned, mdp, &exp.path, c.m)?;
    let export = PolicyExport {
        k: c.k,
        m: c.m,
        mode: exp.mode,
        horizon: exp.horizon(),
        value: policy.value,
        samples: exp.posterior.key.n_samples,
        sampler: exp.posterior.key.sampler,
        seed: exp.posterior.key.seed,
        mdp_hash: exp.posterior.key.mdp_hash.clone(),
        path_hash: exp.posterior.key.path_hash.clone(),
        entries: policy.entries(mdp),
    };
    let mut out = OutDir::create(&c.out)?;
    out.write_json("policy.json", &export)?;
    println!("k={} m={} V_s0={}", c.k, c.m, policy.value);
    let extra = json!({ "k": c.k, "m": c.m, "V_s0": policy.value });
    out.finish(Manifest::new("solve", started, &exp, cf.stats(), settings(&exp, extra)))
}

pub fn sweep(c: SweepCmd) -> anyhow::Result<()> {
    let started = now();
    let exp = Experiment::load(&c.source, &c.posterior)?;
    let t = exp.horizon();
    let ks = c.k.map(|v| v.0).unwrap_or_else(|| (1..=t + 1).collect());
    let ms = c.m.map(|v| v.0).unwrap_or_else(|| (0..=t).collect());
    for &k in &ks {
        exp.check_k(k)?;
    }
    for &m in &ms {
        exp.check_m(m)?;
    }
    let cf = build_cf_mdp(&exp.posterior, &exp.model.mdp, &exp.path);
    let result = cfmdp::sweep(&cf, &exp.path, &ks, &ms, exp.mode)?;
    let violations = result.monotonicity_violations(1e-9);
    let mut out = OutDir::create(&c.out)?;
    out.write_csv("sweep.csv", &result.cells)?;
    out.write_csv("sizes.csv", &result.sizes)?;
    let extra = json!({ "k": ks, "m": ms, "monotonicity_violations": violations.len() });
    out.finish(Manifest::new("sweep", started, &exp, cf.stats(), settings(&exp, extra)))?;
    if let Some((a, b)) = violations.first() {
        bail!(
            "value decreases from (k={}, m={}) {} to (k={}, m={}) {} ({} violations)",
            a.k,
            a.m,
            a.value,
            b.k,
            b.m,
            b.value,
            violations.len()
        );
    }
    Ok(())
}

fn policy_from_export(export: &PolicyExport, mdp: &Mdp64) -> anyhow::Result<CfPolicy64> {
    let h = export.horizon;
    let mut actions = vec![BTreeMap::new(); h + 1];
    for e in &export.entries {
        if e.t >= h || e.j > export.m {
            return Err(Error::InvalidConfig(format!("policy entry (t={}, j={}) out of range", e.t, e.j)).into());
        }
        let s = mdp.state_id(&e.s)?;
        let a = mdp.action_id(&e.a)?;
        actions[e.t].entry(s).or_insert_with(|| vec![None; export.m + 1])[e.j] = Some(a);
    }
    Ok(CfPolicy64 {
        k: export.k,
        m: export.m,
        horizon: h,
        values: vec![BTreeMap::new(); h + 1],
        actions,
        value: export.value,
    })
}

pub fn rollout(c: RolloutCmd) -> anyhow::Result<()> {
    let started = now();
    let export: Option<PolicyExport> = c.policy.as_deref().map(read_json).transpose()?;
    let mut args = c.posterior.clone();
    let exp = match &export {
        Some(p) => {
            args.mode = p.mode;
            Experiment::load_with(&c.source, &args, Some((p.samples, p.sampler, p.seed)))?
        }
        None => Experiment::load(&c.source, &args)?,
    };
    let mdp = &exp.model.mdp;
    let cf = build_cf_mdp(&exp.posterior, mdp, &exp.path);
    let (k, m) = match &export {
        Some(p) => (p.k, p.m),
        None => (c.k.expect("clap requires --k"), c.m.expect("clap requires --m")),
    };
    exp.check_m(m)?;
    let pruned = pruned_for(&exp, &cf, k)?;
    let policy = match &export {
        Some(p) => {
            if p.mdp_hash != exp.posterior.key.mdp_hash || p.path_hash != exp.posterior.key.path_hash {
                return Err(Error::ArtifactMismatch("policy was solved for another MDP or path".into()).into());
            }
            if p.horizon != exp.horizon() {
                return Err(Error::ArtifactMismatch("policy horizon differs from the path".into()).into());
            }
            policy_from_export(p, mdp)?
        }
        None => solve_km(&pruned, mdp, &exp.path, m)?,
    };
    let key = match (&c.feature, &exp.model.env) {
        (Some(f), _) => f.clone(),
        (None, Some((_, cfg))) => cfg.feature().to_string(),
        (None, None) => return Err(Error::InvalidConfig("--feature is required with --mdp".into()).into()),
    };
    if let Some(s) = pruned.distinct_states().into_iter().find(|&s| mdp.feature(s, &key).is_none()) {
        return Err(Error::InvalidConfig(format!("state `{}` has no feature `{key}`", mdp.state_name(s))).into());
    }
    let summary = cfmdp::rollout(
        &pruned,
        &policy,
        &exp.path,
        c.n,
        |s| mdp.feature(s, &key).unwrap_or(f64::NAN),
        c.rollout_seed,
    )?;
    let rows = (0..=exp.horizon()).map(|t| RolloutRow {
        t,
        mean: summary.mean[t],
        std: summary.std[t],
    });
    let mut out = OutDir::create(&c.out)?;
    out.write_csv("rollout.csv", rows)?;
    let extra = json!({ "k": k, "m": m, "n": c.n, "feature": key });
    let mut manifest = Manifest::new("rollout", started, &exp, cf.stats(), settings(&exp, extra));
    manifest.seeds.rollout = Some(c.rollout_seed);
    out.finish(manifest)
}
