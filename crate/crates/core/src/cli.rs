//! Command implementations behind the `cogrelay` binary. Each command reads a
//! manifest or explicit arguments, runs the pipeline and writes its artifacts
//! atomically; the binary only parses flags and maps errors to exit codes.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};

use crate::dtmc::{evaluate_policy, evaluate_policy_detailed};
use crate::error::{Error, Result};
use crate::lp::build_region_lp;
use crate::model::{ChannelModel, OperatingPoint, PolicyProfile, RegionCurve, Warning};
use crate::optimize::{max_lambda_s, max_relative_gap, no_coop_boundary, region_sweep, RegionSweep, SweepConfig};
use crate::sim::{simulate, simulate_with_trace, SimConfig, SimReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub channel: ChannelModel,
    #[serde(rename = "K_list")]
    pub k_list: Vec<usize>,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim: Option<SimConfig>,
    pub output_dir: PathBuf,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read manifest {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("manifest {}: {e}", path.display())))
    }

    /// Checks every section; returns the channel warnings on success.
    pub fn validate(&self) -> Result<Vec<Warning>> {
        let warnings = self.channel.validate()?;
        if self.k_list.is_empty() {
            return Err(Error::Config("K_list must not be empty".into()));
        }
        self.sweep.validate()?;
        if let Some(sim) = &self.sim {
            sim.validate()?;
        }
        Ok(warnings)
    }
}

/// Writes through a temporary sibling and renames it into place, so readers
/// never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path.file_name().ok_or_else(|| Error::Config(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Formats with 9 significant digits in plain decimal notation, falling
/// back to scientific notation outside `[1e-5, 1e9)`.
pub fn sig9(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{x:.8e}");
    let exp: i32 = sci.split_once('e').and_then(|(_, e)| e.parse().ok()).unwrap_or(0);
    if (-5..9).contains(&exp) {
        format!("{:.*}", (8 - exp) as usize, x)
    } else {
        sci
    }
}

pub const REGION_HEADER: &str = "lambda_p,lambda_s_sup,mu_p_opt,K";

pub fn region_csv_rows(sweep: &RegionSweep, out: &mut String) {
    for op in &sweep.points {
        let _ = writeln!(out, "{},{},{},{}", sig9(op.lambda_p), sig9(op.mu_s), sig9(op.mu_p), sweep.curve.k);
    }
}

pub fn policy_csv(op: &OperatingPoint) -> String {
    let mut s = String::from("state,pi,a,b\n");
    for i in 0..op.policy.states() {
        let _ = writeln!(s, "{i},{},{},{}", sig9(op.pi.pi[i]), sig9(op.policy.admit[i]), sig9(op.policy.select_own[i]));
    }
    s
}

/// Run facts that do not belong inside the CSV/SVG artifacts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegionMetadata {
    pub generator: String,
    pub channel: ChannelModel,
    #[serde(rename = "K_list")]
    pub k_list: Vec<usize>,
    pub sweep: SweepConfig,
    pub boundary_semantics: String,
    /// PU loads with no feasible operating point, per buffer size.
    pub omitted: Vec<OmittedLoads>,
    /// Largest relative shortfall of each curve against the curve with the
    /// largest buffer, over their common PU loads.
    pub max_relative_gap_to_largest_k: Vec<GapReport>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OmittedLoads {
    #[serde(rename = "K")]
    pub k: usize,
    pub lambda_p: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GapReport {
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "reference_K")]
    pub reference_k: usize,
    pub gap: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RegionRun {
    pub sweeps: Vec<RegionSweep>,
    pub files: Vec<PathBuf>,
}

/// Sweeps every buffer size in the manifest and writes `region_K{k}.csv`,
/// `region.csv`, `region.svg` and `region.meta.json` (plus per-point policy
/// tables under `policies/` when asked).
pub fn cmd_region(manifest: &RunManifest, out_dir: Option<&Path>, policies: bool) -> Result<RegionRun> {
    manifest.validate()?;
    let dir = out_dir.unwrap_or(&manifest.output_dir);
    let mut ks = manifest.k_list.clone();
    ks.sort_unstable();
    ks.dedup();

    let mut sweeps = Vec::with_capacity(ks.len());
    for &k in &ks {
        info!("sweeping K = {k}");
        let sweep = region_sweep(&manifest.channel, k, &manifest.sweep)?;
        for lp in &sweep.omitted {
            info!("K = {k}: no feasible operating point at lambda_p = {lp}");
        }
        sweeps.push(sweep);
    }

    let mut files = Vec::new();
    let mut combined = format!("{REGION_HEADER}\n");
    for s in &sweeps {
        let mut csv = format!("{REGION_HEADER}\n");
        region_csv_rows(s, &mut csv);
        region_csv_rows(s, &mut combined);
        let path = dir.join(format!("region_K{}.csv", s.curve.k));
        write_atomic(&path, csv.as_bytes())?;
        files.push(path);
        if policies {
            for (idx, op) in s.points.iter().enumerate() {
                let path = dir.join("policies").join(format!("policy_K{}_{idx:03}.csv", s.curve.k));
                write_atomic(&path, policy_csv(op).as_bytes())?;
                files.push(path);
            }
        }
    }
    let path = dir.join("region.csv");
    write_atomic(&path, combined.as_bytes())?;
    files.push(path);

    let curves: Vec<RegionCurve> = sweeps.iter().map(|s| s.curve.clone()).collect();
    let path = dir.join("region.svg");
    write_atomic(&path, render_svg(&curves, &manifest.channel).as_bytes())?;
    files.push(path);

    let largest = curves.last().expect("K_list is nonempty");
    let meta = RegionMetadata {
        generator: format!("cogrelay {}", env!("CARGO_PKG_VERSION")),
        channel: manifest.channel,
        k_list: ks.clone(),
        sweep: manifest.sweep.clone(),
        boundary_semantics: "lambda_s_sup is a supremum: the region requires lambda_s < mu_s and \
                             lambda_p < mu_p strictly, so boundary points are not themselves stable"
            .into(),
        omitted: sweeps.iter().map(|s| OmittedLoads { k: s.curve.k, lambda_p: s.omitted.clone() }).collect(),
        max_relative_gap_to_largest_k: curves
            .iter()
            .map(|c| GapReport { k: c.k, reference_k: largest.k, gap: max_relative_gap(c, largest) })
            .collect(),
    };
    let path = dir.join("region.meta.json");
    write_atomic(&path, (serde_json::to_string_pretty(&meta).expect("metadata serializes") + "\n").as_bytes())?;
    files.push(path);

    Ok(RegionRun { sweeps, files })
}

const PALETTE: [&str; 8] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

/// Static plot of the region curves plus the no-cooperation boundary.
pub fn render_svg(curves: &[RegionCurve], channel: &ChannelModel) -> String {
    let (w, h) = (720.0, 480.0);
    let (left, right, top, bottom) = (70.0, 170.0, 30.0, 60.0);
    let x_max = curves.iter().filter_map(|c| c.points.last().map(|p| p.lambda_p)).fold(channel.f_pd, f64::max);
    let x_max = ((x_max * 10.0).ceil() / 10.0).max(0.1);
    let y_max = ((channel.f_sd * 10.0).ceil() / 10.0).max(0.1);
    let px = |x: f64| left + x / x_max * (w - left - right);
    let py = |y: f64| h - bottom - y / y_max * (h - top - bottom);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<g stroke="black" stroke-width="1"><line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}"/><line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}"/></g>"#,
        px(0.0),
        py(0.0),
        px(x_max),
        py(0.0),
        px(0.0),
        py(0.0),
        px(0.0),
        py(y_max)
    );
    let _ = writeln!(s, r#"<g font-family="sans-serif" font-size="11" fill="black">"#);
    for i in 0..=(x_max * 10.0).round() as usize {
        let x = i as f64 / 10.0;
        let _ = writeln!(
            s,
            r#"<line x1="{0:.2}" y1="{1:.2}" x2="{0:.2}" y2="{2:.2}" stroke="black"/><text x="{0:.2}" y="{3:.2}" text-anchor="middle">{x:.1}</text>"#,
            px(x),
            py(0.0),
            py(0.0) + 5.0,
            py(0.0) + 18.0
        );
    }
    for i in 0..=(y_max * 10.0).round() as usize {
        let y = i as f64 / 10.0;
        let _ = writeln!(
            s,
            r#"<line x1="{0:.2}" y1="{1:.2}" x2="{2:.2}" y2="{1:.2}" stroke="black"/><text x="{3:.2}" y="{4:.2}" text-anchor="end">{y:.1}</text>"#,
            px(0.0),
            py(y),
            px(0.0) - 5.0,
            px(0.0) - 8.0,
            py(y) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">λp (packets/slot)</text>"#,
        px(x_max / 2.0),
        h - 20.0
    );
    let _ = writeln!(
        s,
        r#"<text x="20" y="{:.2}" text-anchor="middle" transform="rotate(-90 20 {:.2})">λs (packets/slot)</text>"#,
        py(y_max / 2.0),
        py(y_max / 2.0)
    );
    let _ = writeln!(s, "</g>");

    let mut legend: Vec<(String, &str, bool)> = Vec::new();
    let nc = [(0.0, no_coop_boundary(channel, 0.0)), (channel.f_pd, 0.0)];
    let _ = writeln!(
        s,
        r##"<polyline fill="none" stroke="#444444" stroke-width="1.5" stroke-dasharray="6 4" points="{}"/>"##,
        nc.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect::<Vec<_>>().join(" ")
    );
    legend.push(("no cooperation".into(), "#444444", true));
    for (i, c) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> =
            c.points.iter().map(|p| format!("{:.2},{:.2}", px(p.lambda_p), py(p.lambda_s_sup))).collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#, pts.join(" "));
        legend.push((format!("K = {}", c.k), color, false));
    }

    let lx = w - right + 15.0;
    let _ = writeln!(s, r#"<g font-family="sans-serif" font-size="12">"#);
    for (i, (label, color, dashed)) in legend.iter().enumerate() {
        let y = top + 10.0 + 20.0 * i as f64;
        let dash = if *dashed { r#" stroke-dasharray="6 4""# } else { "" };
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="{color}" stroke-width="2"{dash}/><text x="{:.2}" y="{:.2}">{label}</text>"#,
            lx + 25.0,
            lx + 32.0,
            y + 4.0
        );
    }
    let _ = writeln!(s, "</g>\n</svg>");
    s
}

pub fn load_policy(path: &Path) -> Result<PolicyProfile> {
    let text =
        fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read policy {}: {e}", path.display())))?;
    let policy: PolicyProfile =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("policy {}: {e}", path.display())))?;
    policy.validate()?;
    Ok(policy)
}

/// Operating point of a policy plus every self-consistent PU service rate
/// found; the point uses the largest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluateReport {
    #[serde(flatten)]
    pub point: OperatingPoint,
    pub candidate_roots: Vec<f64>,
    pub multiple_roots: bool,
}

pub fn cmd_evaluate(policy: &PolicyProfile, channel: &ChannelModel, lambda_p: f64) -> Result<String> {
    let e = evaluate_policy_detailed(policy, channel, lambda_p)?;
    let report =
        EvaluateReport { multiple_roots: e.has_multiple_roots(), point: e.point, candidate_roots: e.candidate_roots };
    Ok(serde_json::to_string_pretty(&report).expect("operating point serializes"))
}

pub fn cmd_lp_dump(channel: &ChannelModel, lambda_p: f64, mu_p: f64, k: usize) -> Result<String> {
    Ok(build_region_lp(channel, lambda_p, mu_p, k)?.to_lp_format())
}

/// One line of the `--validate` comparison table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Comparison {
    pub quantity: String,
    pub analytic: f64,
    pub empirical: f64,
    pub tolerance: String,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Validation {
    /// Set when the comparison was not run, with the reason.
    pub skipped: Option<String>,
    pub comparisons: Vec<Comparison>,
}

impl Validation {
    pub fn passed(&self) -> bool {
        self.skipped.is_none() && self.comparisons.iter().all(|c| c.pass)
    }

    pub fn render(&self) -> String {
        if let Some(why) = &self.skipped {
            return format!("comparison skipped: {why}\n");
        }
        let mut s = format!("{:<24} {:>12} {:>12}  {:<18} result\n", "quantity", "analytic", "empirical", "tolerance");
        for c in &self.comparisons {
            let _ = writeln!(
                s,
                "{:<24} {:>12.6} {:>12.6}  {:<18} {}",
                c.quantity,
                c.analytic,
                c.empirical,
                c.tolerance,
                if c.pass { "pass" } else { "FAIL" }
            );
        }
        s
    }
}

/// Compares a run against the analytical pipeline. The SU service rate is
/// checked on `saturated`, a run of the same policy and seed with
/// `lambda_s = 1`, since an unsaturated SU queue only reveals its arrival
/// rate.
pub fn compare_with_analysis(
    policy: &PolicyProfile,
    channel: &ChannelModel,
    report: &SimReport,
    saturated: &SimReport,
    lambda_p: f64,
) -> Validation {
    if !report.stability_flag_p {
        return Validation {
            skipped: Some(format!("primary queue unstable in simulation at lambda_p = {lambda_p}")),
            comparisons: Vec::new(),
        };
    }
    let op = match evaluate_policy(policy, channel, lambda_p) {
        Ok(op) => op,
        Err(e) => return Validation { skipped: Some(e.to_string()), comparisons: Vec::new() },
    };
    let tv = op.pi.total_variation(&report.empirical_pi);
    let se_s = saturated.throughput_s_std_error();
    let mut comparisons = vec![
        Comparison {
            quantity: "relay distribution (TV)".into(),
            analytic: 0.0,
            empirical: tv,
            tolerance: "TV <= 0.02".into(),
            pass: tv <= 0.02,
        },
        Comparison {
            quantity: "SU service rate".into(),
            analytic: op.mu_s,
            empirical: saturated.empirical_throughput_s,
            tolerance: format!("3 SE = {:.2e}", 3.0 * se_s),
            pass: (saturated.empirical_throughput_s - op.mu_s).abs() <= 3.0 * se_s,
        },
    ];
    if report.pu_busy_slots > 0 {
        let m = report.empirical_mu_p;
        let se_p = (op.mu_p * (1.0 - op.mu_p) / report.pu_busy_slots as f64).sqrt();
        comparisons.push(Comparison {
            quantity: "PU service rate".into(),
            analytic: op.mu_p,
            empirical: m,
            tolerance: format!("3 SE = {:.2e}", 3.0 * se_p),
            pass: (m - op.mu_p).abs() <= 3.0 * se_p,
        });
    }
    comparisons.push(Comparison {
        quantity: "packet conservation".into(),
        analytic: 1.0,
        empirical: if report.conserves_packets() { 1.0 } else { 0.0 },
        tolerance: "exact".into(),
        pass: report.conserves_packets(),
    });
    Validation { skipped: None, comparisons }
}

#[derive(Debug, Clone)]
pub struct SimulateRun {
    pub report: SimReport,
    pub validation: Option<Validation>,
    pub files: Vec<PathBuf>,
}

/// Simulates `policy`, or the optimal policy for the first buffer size in
/// the manifest when none is given (falling back to full cooperation when
/// the load is outside the region), and writes `sim_report.json`.
pub fn cmd_simulate(
    manifest: &RunManifest,
    policy: Option<&PolicyProfile>,
    out_dir: Option<&Path>,
    seed: Option<u64>,
    validate: bool,
    trace: bool,
) -> Result<SimulateRun> {
    manifest.validate()?;
    let mut cfg = manifest.sim.clone().ok_or_else(|| Error::Config("manifest has no sim section".into()))?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let dir = out_dir.unwrap_or(&manifest.output_dir);
    let policy = match policy {
        Some(p) => p.clone(),
        None => {
            let k = manifest.k_list[0];
            match max_lambda_s(&manifest.channel, cfg.lambda_p, k, &manifest.sweep) {
                Ok(op) => op.policy,
                Err(Error::Infeasible { .. }) => {
                    log::warn!(
                        "lambda_p = {} is outside the region for K = {k}; simulating full cooperation",
                        cfg.lambda_p
                    );
                    PolicyProfile::full_cooperation(k)
                }
                Err(e) => return Err(e),
            }
        }
    };

    let mut files = Vec::new();
    let report = if trace {
        let mut buf = Vec::new();
        let r = simulate_with_trace(&policy, &manifest.channel, &cfg, &mut buf)?;
        let path = dir.join("sim_trace.csv");
        write_atomic(&path, &buf)?;
        files.push(path);
        r
    } else {
        simulate(&policy, &manifest.channel, &cfg)?
    };
    let path = dir.join("sim_report.json");
    write_atomic(&path, (serde_json::to_string_pretty(&report).expect("report serializes") + "\n").as_bytes())?;
    files.push(path);

    let validation = if validate {
        let saturated = if cfg.lambda_s == 1.0 {
            report.clone()
        } else {
            simulate(&policy, &manifest.channel, &SimConfig { lambda_s: 1.0, ..cfg.clone() })?
        };
        Some(compare_with_analysis(&policy, &manifest.channel, &report, &saturated, cfg.lambda_p))
    } else {
        None
    };
    Ok(SimulateRun { report, validation, files })
}
