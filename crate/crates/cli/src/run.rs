//! Analyses, the report and its CSV side files.

use std::f64::consts::PI;
use std::path::Path;

use anyhow::Context;
use lattice_flux::cc::{self, AnomalousPoint, OrientationWitness, Tag};
use lattice_flux::flux::{self, Certificate, IndexReport, ProbeStep};
use lattice_flux::lattice::{box_sites, Site};
use lattice_flux::linalg::{self, CMat};
use lattice_flux::shift::{self, KernelData, PerturbedUnitary, ShiftReport};
use lattice_flux::walk::{self, CoinedWalk, WanderingReport};
use lattice_flux::Tolerances;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::scenario::{Analysis, Built, BuiltSystem, Scenario, System};
use crate::{Failure, RNG_NAME, SCHEMA_VERSION};

pub const SPECTRUM_LABEL: &str = "finite-window, boundary-affected";

#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub schema_version: u32,
    pub scenario: String,
    pub description: String,
    pub seed: u64,
    pub rng: &'static str,
    pub tolerance_profile: String,
    pub tolerances: Tolerances,
    pub system: SystemSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub index: Option<IndexSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shift_decomposition: Option<ShiftReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wandering: Option<Vec<WanderingEntry>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stability_probe: Option<ProbeSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub anomalous_transport: Option<Vec<AnomalousPoint>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spectrum_window: Option<SpectrumSection>,
    pub assertions: Vec<Assertion>,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct SystemSummary {
    pub kind: &'static str,
    pub dim: usize,
    pub n_internal: usize,
    pub nonzero_blocks: usize,
    pub max_block_norm: f64,
    pub certificate: Certificate,
}

#[derive(Clone, Debug, Serialize)]
pub struct IndexSection {
    #[serde(flatten)]
    pub report: IndexReport,
    /// `n_o − n_i` for lead networks.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lead_count: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rank_one_defect: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathSection>,
}

#[derive(Clone, Debug, Serialize)]
pub struct PathSection {
    pub incoming_tag: Tag,
    pub outgoing_tag: Tag,
    pub parity_consistent: bool,
    pub witnesses: Vec<OrientationWitness>,
}

#[derive(Clone, Debug, Serialize)]
pub struct WanderingEntry {
    pub label: Site,
    #[serde(flatten)]
    pub report: WanderingReport,
}

#[derive(Clone, Debug, Serialize)]
pub struct ProbeSection {
    pub window_radius: i64,
    pub constant_index: Option<i64>,
    pub steps: Vec<ProbeStep>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SpectrumSection {
    pub label: &'static str,
    pub window_radius: i64,
    pub eigenvalues: usize,
    pub min_modulus: f64,
    pub max_modulus: f64,
    pub bins: Vec<HistogramBin>,
}

#[derive(Clone, Debug, Serialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct Assertion {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// A finished run: the report plus plot-ready series.
pub struct Outcome {
    pub report: Report,
    pub wandering_csv: Option<String>,
    pub spectrum_csv: Option<String>,
}

impl Outcome {
    pub fn report_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.report).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn write(&self, dir: &Path) -> anyhow::Result<()> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        std::fs::write(dir.join("report.json"), self.report_json())?;
        if let Some(c) = &self.wandering_csv {
            std::fs::write(dir.join("wandering_overlaps.csv"), c)?;
        }
        if let Some(c) = &self.spectrum_csv {
            std::fs::write(dir.join("eigenphase_histogram.csv"), c)?;
        }
        Ok(())
    }

    pub fn failure(&self) -> Option<Failure> {
        let failed: Vec<&str> = self
            .report
            .assertions
            .iter()
            .filter(|a| !a.passed)
            .map(|a| a.name.as_str())
            .collect();
        (!failed.is_empty()).then(|| Failure::Assertion(format!("failed: {}", failed.join(", "))))
    }
}

struct Ctx<'a> {
    s: &'a Scenario,
    built: &'a Built,
    tol: Tolerances,
    seed: u64,
    assertions: Vec<Assertion>,
}

impl Ctx<'_> {
    fn check(&mut self, name: &str, passed: bool, detail: impl Into<String>) {
        self.assertions.push(Assertion {
            name: name.into(),
            passed,
            detail: detail.into(),
        });
    }

    /// Independent stream per analysis, so adding one does not shift the
    /// draws of another.
    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::seed_from_u64(self.seed);
        r.set_stream(stream);
        r
    }

    fn expect_index(&mut self, what: &str, n: i64) {
        let e = self.s.expect.clone();
        if let Some(want) = e.index {
            self.check(&format!("{what}: index"), n == want, format!("got {n}, expected {want}"));
        }
        if let Some(want) = e.index_abs {
            self.check(
                &format!("{what}: |index|"),
                n.abs() == want,
                format!("got {n}, expected ±{want}"),
            );
        }
    }
}

fn csv_string(rows: impl FnOnce(&mut csv::Writer<Vec<u8>>) -> csv::Result<()>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    rows(&mut w).expect("writing to memory");
    String::from_utf8(w.into_inner().expect("flush to memory")).expect("csv is utf-8")
}

pub fn run(s: &Scenario, built: &Built, seed: u64, profile: &str, tol: Tolerances) -> Outcome {
    let mut ctx = Ctx {
        s,
        built,
        tol,
        seed,
        assertions: Vec::new(),
    };
    let flux = &built.flux;
    let system = SystemSummary {
        kind: match s.system {
            System::BasicExample { .. } => "basic_example",
            System::HalfLine { .. } => "half_line",
            System::LeadNetwork { .. } => "lead_network",
            System::Walk { .. } => "walk",
            System::Cc { .. } => "cc",
        },
        dim: flux.dim(),
        n_internal: flux.n_internal(),
        nonzero_blocks: flux.blocks.len(),
        max_block_norm: flux.max_block_norm(),
        certificate: flux::certify_isolated(flux, &tol),
    };
    let wants = |a: Analysis| s.analyses.contains(&a);

    let index = wants(Analysis::Index).then(|| index_section(&mut ctx)).flatten();

    let mut shift_decomposition = None;
    let mut wandering = None;
    let mut wandering_csv = None;
    if wants(Analysis::ShiftDecomposition) || wants(Analysis::Wandering) {
        match shift::extract_kernels(flux, &tol).and_then(|kd| Ok((shift::build_perturbed(flux, &kd, &tol)?, kd))) {
            Ok((pu, kd)) => {
                if wants(Analysis::ShiftDecomposition) {
                    shift_decomposition = shift_section(&mut ctx, &pu, &kd);
                }
                if wants(Analysis::Wandering) {
                    let entries = wandering_section(&mut ctx, &pu, &kd);
                    wandering_csv = Some(csv_string(|w| {
                        w.write_record(["seed", "label", "k", "overlap"])?;
                        for (i, e) in entries.iter().enumerate() {
                            for (k, o) in e.report.overlaps.iter().enumerate() {
                                w.write_record([
                                    i.to_string(),
                                    e.label.to_string(),
                                    (k + 1).to_string(),
                                    format!("{o:e}"),
                                ])?;
                            }
                        }
                        Ok(())
                    }));
                    wandering = Some(entries);
                }
            }
            Err(e) => ctx.check("shift construction", false, e.to_string()),
        }
    }

    let stability_probe = wants(Analysis::StabilityProbe).then(|| probe_section(&mut ctx)).flatten();
    let anomalous_transport = wants(Analysis::AnomalousTransport)
        .then(|| anomalous_section(&mut ctx))
        .flatten();

    let mut spectrum_csv = None;
    let spectrum_window = wants(Analysis::SpectrumWindow)
        .then(|| spectrum_section(&mut ctx))
        .flatten();
    if let Some(sp) = &spectrum_window {
        spectrum_csv = Some(csv_string(|w| {
            w.write_record(["label", "bin_lo", "bin_hi", "count"])?;
            for b in &sp.bins {
                w.write_record([SPECTRUM_LABEL.to_string(), format!("{}", b.lo), format!("{}", b.hi), b.count.to_string()])?;
            }
            Ok(())
        }));
    }

    let passed = ctx.assertions.iter().all(|a| a.passed);
    Outcome {
        report: Report {
            schema_version: SCHEMA_VERSION,
            scenario: s.name.clone(),
            description: s.description.clone(),
            seed,
            rng: RNG_NAME,
            tolerance_profile: profile.to_string(),
            tolerances: tol,
            system,
            index,
            shift_decomposition,
            wandering,
            stability_probe,
            anomalous_transport,
            spectrum_window,
            assertions: ctx.assertions,
            passed,
        },
        wandering_csv,
        spectrum_csv,
    }
}

fn index_section(ctx: &mut Ctx) -> Option<IndexSection> {
    let tol = ctx.tol;
    let built = ctx.built;
    let section = match &built.system {
        BuiltSystem::Walk {
            walk, network: Some(net), ..
        } => walk::lead_flux_index(net, walk.coin(), &tol).map(|r| IndexSection {
            report: r.report,
            lead_count: Some(r.expected),
            rank_one_defect: r.rank_one_defect,
            path: None,
        }),
        BuiltSystem::Walk { .. } => {
            flux::index_by_kernels(&built.flux, &tol).and_then(|r| r.check_agreement(&tol).map(|_| r)).map(|r| {
                IndexSection {
                    report: r,
                    lead_count: None,
                    rank_one_defect: None,
                    path: None,
                }
            })
        }
        BuiltSystem::Cc { unitary, path, .. } => cc::cc_index(unitary, path, &tol).map(|r| IndexSection {
            report: r.report,
            lead_count: None,
            rank_one_defect: None,
            path: Some(PathSection {
                incoming_tag: r.incoming_tag,
                outgoing_tag: r.outgoing_tag,
                parity_consistent: r.parity_consistent,
                witnesses: r.witnesses,
            }),
        }),
    };
    match section {
        Ok(sec) => {
            let formulas = 1
                + usize::from(sec.report.rank_formula.is_some())
                + usize::from(!sec.report.odd_trace.is_empty())
                + usize::from(!sec.report.supertrace.is_empty())
                + usize::from(sec.report.kitaev_sum.is_some());
            ctx.check("index formulas agree", true, format!("{formulas} formulas give {}", sec.report.index));
            if let Some(n) = sec.lead_count {
                ctx.check("index equals n_o − n_i", sec.report.index == n, format!("{} vs {n}", sec.report.index));
            }
            ctx.expect_index("index", sec.report.index);
            Some(sec)
        }
        Err(e) => {
            ctx.check("index formulas agree", false, e.to_string());
            None
        }
    }
}

fn shift_section(ctx: &mut Ctx, pu: &PerturbedUnitary, kd: &KernelData) -> Option<ShiftReport> {
    let o = &ctx.s.options;
    let mut rng = ctx.rng(1);
    match shift::verify_shift_structure(pu, kd, o.shift_steps, o.shift_samples, &mut rng, &ctx.tol) {
        Ok(r) => {
            ctx.check(
                "shift decomposition",
                r.passed,
                format!(
                    "multiplicity {}, ‖U*Û − I − F‖ = {:.3e} against ‖Φ_<‖ = {:.3e}, rank F = {}",
                    r.multiplicity, r.bound_lhs, r.phi_lt_norm, r.f_rank
                ),
            );
            Some(r)
        }
        Err(e) => {
            ctx.check("shift decomposition", false, e.to_string());
            None
        }
    }
}

fn wandering_section(ctx: &mut Ctx, pu: &PerturbedUnitary, kd: &KernelData) -> Vec<WanderingEntry> {
    let steps = ctx.s.options.wandering_steps;
    let tol = ctx.tol.verify;
    let mut out = Vec::new();
    let mut worst: f64 = 0.0;
    let mut error = None;
    for v in kd.l() {
        match walk::verify_wandering(pu, &v.state, steps, tol) {
            Ok(r) => {
                worst = worst.max(r.max_overlap);
                out.push(WanderingEntry {
                    label: v.label.clone(),
                    report: r,
                });
            }
            Err(e) => error = Some(e.to_string()),
        }
    }
    match error {
        Some(e) => ctx.check("wandering", false, e),
        None => ctx.check(
            "wandering",
            worst <= tol,
            format!("{} seeds over {steps} steps, max overlap {worst:.3e}", out.len()),
        ),
    }
    out
}

fn probe_section(ctx: &mut Ctx) -> Option<ProbeSection> {
    let BuiltSystem::Walk { walk, projection, .. } = &ctx.built.system else {
        return None;
    };
    let o = &ctx.s.options;
    let (r, steps) = (o.probe_window, o.probe_steps);
    let mut rng = ctx.rng(2);
    let (dim, n) = (walk.coin().dim(), walk.coin().n);
    let gens: Vec<(Site, CMat)> = box_sites(&vec![(-r, r); dim])
        .into_iter()
        .map(|x| (x, linalg::random_hermitian(n, 1.0, &mut rng)))
        .collect();
    let tol = ctx.tol;
    let coin = walk.coin();
    let family = |t: f64| {
        let mut c = coin.clone();
        for (x, h) in &gens {
            c.set(x.clone(), coin.at(x) * linalg::exp_i_hermitian(h, t));
        }
        walk::walk_flux(&CoinedWalk::new(c, &tol)?, projection)
    };
    let steps = flux::index_stability_probe(family, steps, &tol);
    let constant = flux::probe_constant(&steps);
    ctx.check(
        "index constant along the homotopy",
        constant.is_some(),
        format!("{:?}", steps.iter().map(|s| s.index).collect::<Vec<_>>()),
    );
    if let Some(n) = constant {
        ctx.expect_index("stability probe", n);
    }
    Some(ProbeSection {
        window_radius: r,
        constant_index: constant,
        steps,
    })
}

fn anomalous_section(ctx: &mut Ctx) -> Option<Vec<AnomalousPoint>> {
    let BuiltSystem::Cc { base, path, .. } = &ctx.built.system else {
        return None;
    };
    match cc::anomalous_transport(base, path, &ctx.s.options.anomalous_eps, &ctx.tol) {
        Ok(points) => {
            let worst = points.iter().map(|p| (p.trace - p.index as f64).abs()).fold(0.0, f64::max);
            ctx.check(
                "trace Φ_ε equals the index",
                worst <= ctx.tol.formula,
                format!("max deviation {worst:.3e}"),
            );
            let first = points.first().map(|p| p.index);
            ctx.check(
                "anomalous index independent of ε",
                points.iter().all(|p| Some(p.index) == first),
                format!("{:?}", points.iter().map(|p| p.index).collect::<Vec<_>>()),
            );
            if let Some(n) = first {
                ctx.expect_index("anomalous transport", n);
            }
            Some(points)
        }
        Err(e) => {
            ctx.check("anomalous transport", false, e.to_string());
            None
        }
    }
}

/// Eigenphases of the polar factor of the compression of `U` to a box.
/// Illustrative only.
fn spectrum_section(ctx: &mut Ctx) -> Option<SpectrumSection> {
    let r = ctx.s.options.spectrum_radius;
    let u = ctx.built.unitary();
    let sites = box_sites(&vec![(-r, r); u.dim()]);
    let m = match u.matrix_on_window(&sites) {
        Ok(m) => m,
        Err(e) => {
            ctx.check("spectrum window", false, e.to_string());
            return None;
        }
    };
    // the compression itself can be far from normal; its polar factor is unitary
    let svd = m.svd(true, true);
    let w = svd.u.expect("requested") * svd.v_t.expect("requested");
    let Some(eig) = w.try_schur(1e-14, 10_000).and_then(|s| s.eigenvalues()) else {
        ctx.check("spectrum window", false, "Schur iteration did not converge");
        return None;
    };
    let nb = ctx.s.options.histogram_bins;
    let width = 2.0 * PI / nb as f64;
    let mut bins: Vec<HistogramBin> = (0..nb)
        .map(|i| HistogramBin {
            lo: -PI + i as f64 * width,
            hi: -PI + (i + 1) as f64 * width,
            count: 0,
        })
        .collect();
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for z in eig.iter() {
        let k = (((z.arg() + PI) / width) as usize).min(nb - 1);
        bins[k].count += 1;
        lo = lo.min(z.norm());
        hi = hi.max(z.norm());
    }
    Some(SpectrumSection {
        label: SPECTRUM_LABEL,
        window_radius: r,
        eigenvalues: eig.len(),
        min_modulus: lo,
        max_modulus: hi,
        bins,
    })
}
