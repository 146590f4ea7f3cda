//! Acceptance checks for the engine and the `sghc` binary.
//!
//! Prints one `PASS` or `FAIL` line per criterion and exits nonzero if any fails.
//! Every check compares against an oracle written here, not against library code.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use proptest::collection::vec;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use sghc::analysis::{compare_reconstructions, vrr_experiment, VrrExperimentConfig, VrrExperimentReport};
use sghc::corpus::synthetic_corpus;
use sghc::features::{center_crop, dct2, idct2, paired_features};
use sghc::quantizer::SemanticQuantizer;
use sghc::trainer::{
    compute_usage, ema_update_table, train_pixel_subcodebooks, train_semantic_codebook, train_semantic_codebook_from,
};
use sghc::vocab::{
    assemble_stream, export_embedding_table, frame_image, parse_frame, split_stream, IdLayout, LayoutKind,
};
use sghc::{
    dequantize, flatten_index, quantize_hierarchical, unflatten_index, CodeTable, FeatureGrid, FrameMode, GrayImage,
    HierarchicalCodebook, PatchSpec, PixelSubCodebook, SemanticCodebook, TokenGrid, TrainConfig, VocabFrame,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn normals(n: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum()
}

/// Exhaustive double-precision nearest row, lowest index on ties.
fn brute_nearest(v: &[f32], rows: &[f32], dim: usize) -> usize {
    let mut best = (0, f64::INFINITY);
    for (i, row) in rows.chunks(dim).enumerate() {
        let d = sq_dist(v, row);
        if d < best.1 {
            best = (i, d);
        }
    }
    best.0
}

fn pool(threads: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap()
}

fn sghc(args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_sghc")).args(args).output().unwrap();
    assert!(
        out.status.success(),
        "sghc {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn quantizer_oracle() -> Outcome {
    let (k, dim, n) = (256, 48, 1000);
    let mut r = rng(1);
    let mut codes = normals(k * dim, &mut r);
    // Duplicate rows and exact hits exercise the tie-break.
    for (dst, src) in [(200, 17), (255, 0), (131, 130)] {
        codes.copy_within(src * dim..(src + 1) * dim, dst * dim);
    }
    let mut queries = normals(n * dim, &mut r);
    for (q, c) in [(0, 17), (1, 200), (2, 0), (3, 131), (4, 99)] {
        queries[q * dim..(q + 1) * dim].copy_from_slice(&codes[c * dim..(c + 1) * dim]);
    }

    let t = Instant::now();
    let cb = SemanticCodebook::new(CodeTable::new(k, dim, codes.clone()).unwrap(), 0.99, true).unwrap();
    let grid = FeatureGrid::new(1, n, dim, queries.clone()).unwrap();
    let got = SemanticQuantizer::new(&cb).unwrap().assign(&grid).unwrap();
    let elapsed = t.elapsed();

    let matches = (0..n)
        .filter(|&q| got[q].0 as usize == brute_nearest(&queries[q * dim..(q + 1) * dim], &codes, dim))
        .count();
    let ties = [got[0].0, got[1].0, got[2].0, got[3].0];
    outcome(
        matches == n && ties == [17, 17, 0, 130] && elapsed < Duration::from_secs(5),
        format!("{matches}/{n} match exhaustive f64 search, tie picks {ties:?}, {elapsed:.2?}"),
    )
}

fn random_hierarchical(k: usize, m: usize, dim_sem: usize, dim_pix: usize, seed: u64) -> HierarchicalCodebook {
    let mut r = rng(seed);
    let sem = SemanticCodebook::new(
        CodeTable::new(k, dim_sem, normals(k * dim_sem, &mut r)).unwrap(),
        0.99,
        true,
    )
    .unwrap();
    let subs = (0..k)
        .map(|_| PixelSubCodebook::new(CodeTable::new(m, dim_pix, normals(m * dim_pix, &mut r)).unwrap()))
        .collect();
    HierarchicalCodebook::new(sem, subs, 0.99).unwrap()
}

fn hierarchical_conditioning() -> Outcome {
    let (k, m, ds, dp, side) = (64, 8, 4, 6, 16);
    let hier = random_hierarchical(k, m, ds, dp, 2);
    let mut r = rng(3);
    let cells = side * side;
    let mut sem = normals(cells * ds, &mut r);
    let mut pix = normals(cells * dp, &mut r);
    // Cell 0 sits on semantic code 0 but its pixel vector is code 3 of sub-codebook 5.
    sem[..ds].copy_from_slice(hier.semantic().row(0));
    pix[..dp].copy_from_slice(hier.sub(5).row(3));

    let q = quantize_hierarchical(
        &FeatureGrid::new(side, side, ds, sem.clone()).unwrap(),
        &FeatureGrid::new(side, side, dp, pix.clone()).unwrap(),
        &hier,
    )
    .unwrap();
    let all_pixel_codes: Vec<f32> = hier.subs().iter().flat_map(|s| s.vectors().iter().copied()).collect();
    let mut matches = 0;
    let mut differing = Vec::new();
    for c in 0..cells {
        let v = &pix[c * dp..(c + 1) * dp];
        let i = brute_nearest(&sem[c * ds..(c + 1) * ds], hier.semantic().vectors(), ds);
        let j = brute_nearest(v, hier.sub(i).vectors(), dp);
        if q.tokens.flat_idx()[c] as usize == i * m + j {
            matches += 1;
        }
        let unrestricted = brute_nearest(v, &all_pixel_codes, dp);
        if unrestricted != i * m + j {
            differing.push((c, i * m + j, unrestricted));
        }
    }
    let constructed = differing.first().filter(|d| d.0 == 0).copied();
    outcome(
        matches == cells && constructed.is_some_and(|(_, h, u)| h / m == 0 && u == 5 * m + 3),
        format!(
            "{matches}/{cells} match restricted oracle; constructed cell restricted={:?} unrestricted={:?}; {} cells differ overall",
            constructed.map(|d| d.1),
            constructed.map(|d| d.2),
            differing.len()
        ),
    )
}

fn ema_and_convergence() -> Outcome {
    let t = Instant::now();
    let mut notes = String::new();

    // One EMA step against its closed form.
    let (k, dim, mom) = (3, 4, 0.9f32);
    let mut r = rng(4);
    let init = normals(k * dim, &mut r);
    let batch = normals(10 * dim, &mut r);
    let assignments = [0u32, 1, 0, 0, 1, 1, 1, 0, 0, 1];
    let mut table = CodeTable::new(k, dim, init.clone()).unwrap();
    ema_update_table(&mut table, mom, &batch, &assignments).unwrap();
    let mut closed_err = 0f64;
    for code in 0..k {
        let members: Vec<usize> = (0..10).filter(|&n| assignments[n] as usize == code).collect();
        for d in 0..dim {
            let old = init[code * dim + d] as f64;
            let expected = if members.is_empty() {
                old
            } else {
                let mean = members.iter().map(|&n| batch[n * dim + d] as f64).sum::<f64>() / members.len() as f64;
                mom as f64 * old + (1.0 - mom as f64) * mean
            };
            closed_err = closed_err.max((table.row(code)[d] as f64 - expected).abs());
        }
    }
    let unassigned_kept = table.row(2) == &init[2 * dim..3 * dim];
    let _ = write!(notes, "closed-form err {closed_err:.1e}");

    // Four clusters with sigma 0.01 on a grid of spacing 10.
    let centers = [[0.0f32, 0.0], [10.0, 0.0], [0.0, 10.0], [10.0, 10.0]];
    let mut data = Vec::new();
    for i in 0..1000 {
        let c = centers[i % 4];
        let noise: [f32; 2] = [StandardNormal.sample(&mut r), StandardNormal.sample(&mut r)];
        data.extend_from_slice(&[c[0] + 0.01 * noise[0], c[1] + 0.01 * noise[1]]);
    }
    let grid = FeatureGrid::new(1, 1000, 2, data).unwrap();
    let cfg = TrainConfig {
        k: 4,
        m: 1,
        epochs: 50,
        batch_size: 64,
        momentum: 0.99,
        seed: 5,
        ..TrainConfig::default()
    };
    // Default seeding, then a start 2.5 away from every center.
    let offset: Vec<f32> = centers.iter().flat_map(|c| [c[0] + 1.5, c[1] - 2.0]).collect();
    let runs = [
        train_semantic_codebook(std::slice::from_ref(&grid), &cfg, |_| {}).unwrap(),
        train_semantic_codebook_from(
            std::slice::from_ref(&grid),
            CodeTable::new(4, 2, offset).unwrap(),
            &cfg,
            |_| {},
        )
        .unwrap(),
    ];
    let mut converged = true;
    let mut monotone = true;
    for (name, run) in ["kmeans++", "offset"].iter().zip(&runs) {
        let worst = centers
            .iter()
            .map(|c| {
                (0..4)
                    .map(|code| sq_dist(c, run.codebook.row(code)).sqrt())
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(0.0, f64::max);
        let rises = run
            .metrics
            .windows(2)
            .filter(|w| w[1].distortion > w[0].distortion + 1e-6)
            .count();
        converged &= worst < 0.05 && run.metrics.len() <= 50;
        monotone &= rises == 0;
        let _ = write!(
            notes,
            "; {name}: worst center err {worst:.4} after {} epochs, distortion rises {rises}",
            run.metrics.len()
        );
    }
    let elapsed = t.elapsed();
    let _ = write!(notes, "; {elapsed:.2?}");
    outcome(
        closed_err <= 1e-6 && unassigned_kept && converged && monotone && elapsed < Duration::from_secs(10),
        notes,
    )
}

/// Raw bytes of the semantic section of an SGHC file, located from its header.
fn semantic_range(bytes: &[u8]) -> &[u8] {
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
    assert_eq!(&bytes[..4], b"SGHC");
    let (k, dim_sem) = (word(8), word(16));
    // magic, version, K, m, d_sem, d_pix, momentum, frozen flag
    let start = 4 + 5 * 4 + 4 + 1;
    &bytes[start..start + 4 * (2 * k * dim_sem + k)]
}

fn decoupling() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    let input = dir.path().join("sem.sghc");
    sghc(&[
        "synth-corpus",
        "--out",
        s(&corpus),
        "--count",
        "12",
        "--size",
        "64",
        "--seed",
        "9",
    ]);
    sghc(&[
        "train-semantic",
        "--corpus",
        s(&corpus),
        "--k",
        "32",
        "--m",
        "4",
        "--epochs",
        "4",
        "--out",
        s(&input),
    ]);
    let before = Sha256::digest(semantic_range(&std::fs::read(&input).unwrap()));
    let mut equal = 0;
    let mut reported = 0;
    let runs = ["0", "1", "2"];
    for seed in runs {
        let out = dir.path().join(format!("pix{seed}.sghc"));
        let stdout = sghc(&[
            "train-pixel",
            "--corpus",
            s(&corpus),
            "--codebook",
            s(&input),
            "--epochs",
            "4",
            "--seed",
            seed,
            "--out",
            s(&out),
        ]);
        let bytes = std::fs::read(&out).unwrap();
        equal += (Sha256::digest(semantic_range(&bytes)) == before) as usize;
        reported += stdout.lines().any(|l| l == "semantic unchanged: true") as usize;
    }
    outcome(
        equal == runs.len() && reported == runs.len(),
        format!("{equal}/{} runs hash-equal, {reported} reported unchanged", runs.len()),
    )
}

fn flatten_bijection() -> Outcome {
    let (k, m) = (16384u32, 12u32);
    let t = Instant::now();
    let mut seen = vec![false; (k * m) as usize];
    let mut mismatches = 0;
    for i in 0..k {
        for j in 0..m {
            let h = flatten_index(i, j, m).unwrap();
            if h != i * m + j || seen[h as usize] || unflatten_index(h, m).unwrap() != (i, j) {
                mismatches += 1;
            } else {
                seen[h as usize] = true;
            }
        }
    }
    for h in 0..k * m {
        let (i, j) = unflatten_index(h, m).unwrap();
        if i >= k || j >= m || flatten_index(i, j, m).unwrap() != h {
            mismatches += 1;
        }
    }
    let elapsed = t.elapsed();
    let covered = seen.iter().all(|&b| b);
    outcome(
        mismatches == 0 && covered && elapsed < Duration::from_secs(1),
        format!(
            "{} indices, {mismatches} mismatches, all covered {covered}, {elapsed:.2?}",
            k * m
        ),
    )
}

/// Orthonormal 8×8 DCT-II by direct quadruple summation.
fn dct_direct(patch: &[f32]) -> Vec<f64> {
    let p = 8;
    let alpha = |u: usize| {
        if u == 0 {
            (1.0 / p as f64).sqrt()
        } else {
            (2.0 / p as f64).sqrt()
        }
    };
    let c = |x: usize, u: usize| ((2 * x + 1) as f64 * u as f64 * std::f64::consts::PI / (2 * p) as f64).cos();
    let mut out = vec![0.0; p * p];
    for u in 0..p {
        for v in 0..p {
            let mut acc = 0.0;
            for y in 0..p {
                for x in 0..p {
                    acc += patch[y * p + x] as f64 * c(y, u) * c(x, v);
                }
            }
            out[u * p + v] = alpha(u) * alpha(v) * acc;
        }
    }
    out
}

fn dct_fidelity() -> Outcome {
    let mut r = rng(6);
    let (mut roundtrip, mut parseval, mut oracle) = (0f64, 0f64, 0f64);
    for _ in 0..10_000 {
        let patch: Vec<f32> = (0..64).map(|_| r.random_range(0.0..1.0)).collect();
        let coeffs = dct2(&patch);
        let back = idct2(&coeffs);
        for (a, b) in patch.iter().zip(&back) {
            roundtrip = roundtrip.max((a - b).abs() as f64);
        }
        let energy: f64 = patch.iter().map(|&v| (v as f64).powi(2)).sum();
        let coeff_energy: f64 = coeffs.iter().map(|&v| (v as f64).powi(2)).sum();
        parseval = parseval.max((energy - coeff_energy).abs() / energy);
        for (a, b) in coeffs.iter().zip(dct_direct(&patch)) {
            oracle = oracle.max((*a as f64 - b).abs());
        }
    }
    outcome(
        roundtrip <= 1e-6 && parseval <= 1e-6 && oracle <= 1e-6,
        format!(
            "round trip {roundtrip:.1e}, Parseval rel {parseval:.1e}, direct oracle {oracle:.1e} over 10^4 patches"
        ),
    )
}

struct VrrRun {
    seed: u64,
    codebook: HierarchicalCodebook,
    report: VrrExperimentReport,
}

struct VrrFixture {
    images: Vec<GrayImage>,
    runs: Vec<VrrRun>,
    elapsed: Duration,
}

const VRR_IMAGES: usize = 60;

fn vrr_fixture() -> &'static VrrFixture {
    static FIXTURE: OnceLock<VrrFixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let t = Instant::now();
        let spec = PatchSpec::default();
        let images = synthetic_corpus(7, VRR_IMAGES, 96).unwrap();
        let (sem, pix): (Vec<FeatureGrid>, Vec<FeatureGrid>) =
            images.iter().map(|img| paired_features(img, spec, 4).unwrap()).unzip();
        let runs = (0..5)
            .map(|seed| {
                let cfg = TrainConfig {
                    k: 256,
                    m: 8,
                    epochs: 10,
                    batch_size: 64,
                    seed,
                    ..TrainConfig::default()
                };
                let stage1 = train_semantic_codebook(&sem, &cfg, |_| {}).unwrap();
                let codebook = train_pixel_subcodebooks(&sem, &pix, &stage1.codebook, &cfg, |_| {})
                    .unwrap()
                    .codebook;
                let exp = VrrExperimentConfig {
                    seeds: vec![seed],
                    kmeans_seed: seed,
                    ..VrrExperimentConfig::default()
                };
                let report = vrr_experiment(&images, &codebook, &exp).unwrap();
                VrrRun { seed, codebook, report }
            })
            .collect();
        VrrFixture {
            images,
            runs,
            elapsed: t.elapsed(),
        }
    })
}

/// Pixel features and hierarchical tokens of the fixture, from brute-force search.
fn oracle_tokens(images: &[GrayImage], hier: &HierarchicalCodebook) -> (Vec<f32>, Vec<usize>, Vec<usize>) {
    let (mut features, mut sem_idx, mut flat_idx) = (Vec::new(), Vec::new(), Vec::new());
    for img in images {
        let (sem, pix) = paired_features(img, PatchSpec::default(), 4).unwrap();
        for (s, p) in sem.iter_cells().zip(pix.iter_cells()) {
            let i = brute_nearest(s, hier.semantic().vectors(), hier.dim_sem());
            let j = brute_nearest(p, hier.sub(i).vectors(), hier.dim_pix());
            features.extend_from_slice(p);
            sem_idx.push(i);
            flat_idx.push(i * hier.m() + j);
        }
    }
    (features, sem_idx, flat_idx)
}

/// Sample-variance VRR with an unweighted mean over codes holding at least two patches.
fn vrr_oracle(assign: &[usize], features: &[f32], dim: usize) -> f64 {
    let n = assign.len();
    let variance = |members: &[usize]| -> f64 {
        let len = members.len() as f64;
        (0..dim)
            .map(|d| {
                let mean = members.iter().map(|&p| features[p * dim + d] as f64).sum::<f64>() / len;
                members
                    .iter()
                    .map(|&p| (features[p * dim + d] as f64 - mean).powi(2))
                    .sum::<f64>()
                    / (len - 1.0)
            })
            .sum()
    };
    let mut groups: HashMap<usize, Vec<usize>> = HashMap::new();
    for (p, &a) in assign.iter().enumerate() {
        groups.entry(a).or_default().push(p);
    }
    let within: Vec<f64> = groups.values().filter(|g| g.len() >= 2).map(|g| variance(g)).collect();
    let v_mean = within.iter().sum::<f64>() / within.len() as f64;
    let all: Vec<usize> = (0..n).collect();
    1.0 - v_mean / variance(&all)
}

fn vrr_ordering() -> Outcome {
    let fx = vrr_fixture();
    let mut ordered = 0;
    let mut oracle_err = 0f64;
    let mut worst_random = 0f64;
    let mut rows = Vec::new();
    for run in &fx.runs {
        let r = &run.report;
        let random = r.random[0].1.vrr;
        worst_random = worst_random.max(random.abs());
        if random < r.semantic.vrr && r.semantic.vrr < r.hierarchical.vrr && random.abs() < 0.01 {
            ordered += 1;
        }
        rows.push(format!(
            "seed {}: {:.4} < {:.4} < {:.4}",
            run.seed, random, r.semantic.vrr, r.hierarchical.vrr
        ));
    }
    // Recompute the first run from scratch.
    let first = &fx.runs[0];
    let (features, sem_idx, flat_idx) = oracle_tokens(&fx.images, &first.codebook);
    oracle_err = oracle_err
        .max((vrr_oracle(&sem_idx, &features, 64) - first.report.semantic.vrr).abs())
        .max((vrr_oracle(&flat_idx, &features, 64) - first.report.hierarchical.vrr).abs());
    outcome(
        ordered == fx.runs.len() && oracle_err < 1e-9 && fx.elapsed < Duration::from_secs(300),
        format!(
            "{ordered}/{} seeds ordered on {VRR_IMAGES} images, max |random| {worst_random:.4}, oracle err {oracle_err:.1e}, {:.1?} [{}]",
            fx.runs.len(),
            fx.elapsed,
            rows.join("; ")
        ),
    )
}

/// Orthonormal inverse DCT of a row-major 8×8 coefficient block.
fn idct_direct(coeffs: &[f32]) -> Vec<f64> {
    let p = 8;
    let alpha = |u: usize| {
        if u == 0 {
            (1.0 / p as f64).sqrt()
        } else {
            (2.0 / p as f64).sqrt()
        }
    };
    let c = |x: usize, u: usize| ((2 * x + 1) as f64 * u as f64 * std::f64::consts::PI / (2 * p) as f64).cos();
    let mut out = vec![0.0; p * p];
    for y in 0..p {
        for x in 0..p {
            let mut acc = 0.0;
            for u in 0..p {
                for v in 0..p {
                    acc += alpha(u) * alpha(v) * coeffs[u * p + v] as f64 * c(y, u) * c(x, v);
                }
            }
            out[y * p + x] = acc;
        }
    }
    out
}

/// MSE of decoding the given per-cell coefficient blocks, clamped to `[0, 1]`,
/// against the cropped image.
fn decoded_mse(target: &GrayImage, blocks: &[Vec<f32>]) -> f64 {
    let gw = target.width() / 8;
    let mut sum = 0.0;
    for (cell, block) in blocks.iter().enumerate() {
        let (gr, gc) = (cell / gw, cell % gw);
        for (n, v) in idct_direct(block).into_iter().enumerate() {
            let (y, x) = (gr * 8 + n / 8, gc * 8 + n % 8);
            sum += (target.get(y, x) as f64 - v.clamp(0.0, 1.0)).powi(2);
        }
    }
    sum / (target.width() * target.height()) as f64
}

fn reconstruction_ordering() -> Outcome {
    let fx = vrr_fixture();
    let hier = &fx.runs[0].codebook;
    let mut better = 0;
    let mut worst_ratio = 0f64;
    let mut lib_err = 0f64;
    for img in &fx.images {
        let target = center_crop(img, PatchSpec::default()).unwrap();
        let (sem, pix) = paired_features(img, PatchSpec::default(), 4).unwrap();
        let mut hier_blocks = Vec::new();
        let mut sem_blocks = Vec::new();
        for (s, p) in sem.iter_cells().zip(pix.iter_cells()) {
            let i = brute_nearest(s, hier.semantic().vectors(), 16);
            let j = brute_nearest(p, hier.sub(i).vectors(), 64);
            hier_blocks.push(hier.sub(i).row(j).to_vec());
            // Low band placed in the top-left 4×4, every other coefficient zero.
            let mut block = vec![0.0f32; 64];
            for (n, &v) in hier.semantic().row(i).iter().enumerate() {
                block[(n / 4) * 8 + n % 4] = v;
            }
            sem_blocks.push(block);
        }
        let (h, so) = (decoded_mse(&target, &hier_blocks), decoded_mse(&target, &sem_blocks));
        if h < so {
            better += 1;
        }
        worst_ratio = worst_ratio.max(h / so);
        let lib = compare_reconstructions(img, hier, PatchSpec::default(), 4).unwrap();
        lib_err = lib_err
            .max((lib.hierarchical_metrics.mse - h).abs())
            .max((lib.semantic_only_metrics.mse - so).abs());
    }
    outcome(
        better == fx.images.len() && lib_err < 1e-6,
        format!(
            "{better}/{} images with lower hierarchical MSE, worst ratio {worst_ratio:.3}, library vs oracle {lib_err:.1e}",
            fx.images.len()
        ),
    )
}

fn layout_ids(layout_kind: LayoutKind, v: u32, atom: &sghc::Atom) -> u32 {
    use sghc::Atom;
    match (layout_kind, atom) {
        (LayoutKind::Unified, Atom::ImStart) => v,
        (LayoutKind::Unified, Atom::ImEnd) => v + 1,
        (LayoutKind::Unified, Atom::StartImg) => v + 2,
        (LayoutKind::Unified, Atom::EndImg) => v + 3,
        (LayoutKind::Unified, Atom::Img(h)) => v + 4 + h,
        (LayoutKind::GenerationOnly, Atom::StartImg) => v,
        (LayoutKind::GenerationOnly, Atom::EndImg) => v + 1,
        (LayoutKind::GenerationOnly, Atom::Img(h)) => v + 2 + h,
        other => panic!("no id for {other:?}"),
    }
}

fn vocab_bridge() -> Outcome {
    let (k, m) = (64usize, 8usize);
    let hier = random_hierarchical(k, m, 5, 7, 8);
    let table = export_embedding_table(&hier);
    let mut row_mismatch = 0;
    for h in 0..k * m {
        let tokens = TokenGrid::from_flat(1, 1, m as u32, vec![h as u32]).unwrap();
        let deq = dequantize(&tokens, &hier).unwrap();
        let expected: Vec<f32> = hier
            .semantic()
            .row(h / m)
            .iter()
            .chain(hier.sub(h / m).row(h % m))
            .copied()
            .collect();
        if table.row(h) != deq.cell(0) || table.row(h) != &expected[..] {
            row_mismatch += 1;
        }
    }

    let cases = 10_000;
    let mut runner = TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    });
    let frames = (1usize..7, 1usize..7, 1u32..16, 1u32..64, any::<bool>())
        .prop_flat_map(|(h, w, m, k, gen)| (Just(h), Just(w), Just(m), vec(0..k * m, h * w), Just(gen)));
    let frame_result = runner.run(&frames, |(h, w, m, flat, gen)| {
        let tokens = TokenGrid::from_flat(h, w, m, flat.clone()).unwrap();
        let mode = if gen {
            FrameMode::Generation
        } else {
            FrameMode::Understanding
        };
        let frame = frame_image(&tokens, mode);
        let (open, close) = if gen {
            ("<start_of_image>", "<end_of_image>")
        } else {
            ("<|im_start|>", "<|im_end|>")
        };
        let text: String = std::iter::once(open.to_string())
            .chain(flat.iter().map(|t| format!("<IMG_{t}>")))
            .chain(std::iter::once(close.to_string()))
            .collect();
        prop_assert_eq!(frame.to_text(), text.clone());
        let reparsed = VocabFrame::parse_text(&text).unwrap();
        prop_assert_eq!(parse_frame(&reparsed, h, w, m).unwrap(), tokens);
        Ok(())
    });

    let mut runner = TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    });
    let streams = (1u32..5000, 1u32..600, any::<bool>()).prop_flat_map(|(v, images, unified)| {
        (
            Just(v),
            Just(images),
            Just(unified),
            vec(0..v, 0..6),
            vec((vec(0..images, 1..10), any::<bool>()), 0..4),
        )
    });
    let stream_result = runner.run(&streams, |(v, images, unified, text, segments)| {
        let kind = if unified {
            LayoutKind::Unified
        } else {
            LayoutKind::GenerationOnly
        };
        let layout = IdLayout::new(v, images, kind).unwrap();
        let frames: Vec<VocabFrame> = segments
            .iter()
            .map(|(flat, gen)| {
                let tokens = TokenGrid::from_flat(1, flat.len(), images, flat.clone()).unwrap();
                let mode = if *gen || !unified {
                    FrameMode::Generation
                } else {
                    FrameMode::Understanding
                };
                frame_image(&tokens, mode)
            })
            .collect();
        let stream = assemble_stream(&text, &frames, &layout).unwrap();
        let mut expected = text.clone();
        for f in &frames {
            expected.extend(f.atoms().iter().map(|a| layout_ids(kind, v, a)));
        }
        prop_assert_eq!(&stream.ids, &expected);
        let masked = stream
            .ids
            .iter()
            .zip(&stream.image_mask)
            .filter(|(_, &img)| img)
            .count();
        prop_assert_eq!(masked, segments.iter().map(|s| s.0.len()).sum::<usize>());
        let (text_back, frames_back) = split_stream(&stream.ids, &layout).unwrap();
        prop_assert_eq!(text_back, text);
        prop_assert_eq!(frames_back, frames);
        Ok(())
    });

    let detail = format!(
        "{row_mismatch}/{} table rows differ from dequantize; frame round trips {}; stream round trips {}",
        k * m,
        frame_result
            .as_ref()
            .map_or_else(|e| e.to_string(), |_| format!("{cases} ok")),
        stream_result
            .as_ref()
            .map_or_else(|e| e.to_string(), |_| format!("{cases} ok")),
    );
    outcome(
        row_mismatch == 0 && frame_result.is_ok() && stream_result.is_ok(),
        detail,
    )
}

fn usage_reporting() -> Outcome {
    let mut notes = Vec::new();

    // 10 patches on a line against codes at 0, 10, 20, 30: counts 4, 3, 3, 0.
    let codes = SemanticCodebook::new(CodeTable::new(4, 1, vec![0.0, 10.0, 20.0, 30.0]).unwrap(), 0.99, true).unwrap();
    let patches = [0.0, 1.0, -2.0, 4.9, 9.0, 11.0, 14.9, 19.0, 21.0, 24.0];
    let grid = FeatureGrid::new(2, 5, 1, patches.to_vec()).unwrap();
    let idx: Vec<u32> = SemanticQuantizer::new(&codes)
        .unwrap()
        .assign(&grid)
        .unwrap()
        .iter()
        .map(|a| a.0)
        .collect();
    let micro = compute_usage(&idx, 4);
    let micro_ok = micro.assigned_counts == [4, 3, 3, 0] && micro.usage_percent == 75.0;
    notes.push(format!(
        "micro counts {:?} usage {}%",
        micro.assigned_counts, micro.usage_percent
    ));

    // Recount the VRR fixture run from brute-force tokens.
    let fx = vrr_fixture();
    let run = &fx.runs[0];
    let (_, sem_idx, flat_idx) = oracle_tokens(&fx.images, &run.codebook);
    let recount = |idx: &[usize], len: usize| {
        let mut counts = vec![0u64; len];
        idx.iter().for_each(|&i| counts[i] += 1);
        counts
    };
    let sem_counts = recount(&sem_idx, 256);
    let flat_counts = recount(&flat_idx, 2048);
    let percent = |c: &[u64]| 100.0 * c.iter().filter(|&&n| n > 0).count() as f64 / c.len() as f64;
    let fixture_ok = run.report.semantic_usage.assigned_counts == sem_counts
        && run.report.hierarchical_usage.assigned_counts == flat_counts
        && run.report.semantic_usage.usage_percent == percent(&sem_counts)
        && run.report.hierarchical_usage.usage_percent == percent(&flat_counts);
    notes.push(format!(
        "fixture semantic {:.2}% hierarchical {:.2}% exact {fixture_ok}",
        run.report.semantic_usage.usage_percent, run.report.hierarchical_usage.usage_percent
    ));

    // Gaussian data against a start where every code coincides, so only code 0 is used.
    let (k, dim, n) = (64, 8, 8192);
    let mut r = rng(10);
    let data = FeatureGrid::new(1, n, dim, normals(n * dim, &mut r)).unwrap();
    let init = CodeTable::new(k, dim, vec![5.0; k * dim]).unwrap();
    let cfg = TrainConfig {
        k,
        m: 1,
        epochs: 10,
        seed: 11,
        ..TrainConfig::default()
    };
    let trained = train_semantic_codebook_from(std::slice::from_ref(&data), init, &cfg, |_| {}).unwrap();
    let first = trained.metrics[0].usage_percent;
    let last = trained.metrics.last().unwrap().usage_percent;
    let revived: usize = trained.metrics.iter().map(|m| m.revived).sum();
    let q = SemanticQuantizer::new(&trained.codebook)
        .unwrap()
        .assign(&data)
        .unwrap();
    let independent = percent(&recount(&q.iter().map(|a| a.0 as usize).collect::<Vec<_>>(), k));
    notes.push(format!(
        "gaussian usage {first:.1}% -> {last:.1}% ({revived} revived, recount {independent:.1}%)"
    ));
    outcome(
        micro_ok && fixture_ok && last > 90.0 && independent > 90.0,
        notes.join("; "),
    )
}

fn throughput() -> Outcome {
    let (k, dim, n) = (16384, 48, 20_000);
    let mut r = rng(12);
    let cb = SemanticCodebook::new(CodeTable::new(k, dim, normals(k * dim, &mut r)).unwrap(), 0.99, true).unwrap();
    let grid = FeatureGrid::new(1, n, dim, normals(n * dim, &mut r)).unwrap();
    let quantizer = SemanticQuantizer::new(&cb).unwrap();

    let timed = |threads: usize| {
        let pool = pool(threads);
        let mut best = Duration::MAX;
        let mut out = Vec::new();
        for _ in 0..3 {
            let t = Instant::now();
            out = pool.install(|| quantizer.assign(&grid).unwrap());
            best = best.min(t.elapsed());
        }
        (n as f64 / best.as_secs_f64(), out)
    };
    let (single, reference) = timed(1);
    let (eight, out8) = timed(8);
    let scaling = eight / single;
    let mut invariant = out8 == reference;
    for threads in [2, 3] {
        invariant &= pool(threads).install(|| quantizer.assign(&grid).unwrap()) == reference;
    }

    // Whole-pipeline artifacts from the binary under different thread counts.
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    sghc(&[
        "synth-corpus",
        "--out",
        s(&corpus),
        "--count",
        "6",
        "--size",
        "64",
        "--seed",
        "13",
    ]);
    let mut artifacts = Vec::new();
    for threads in ["1", "8"] {
        let sem = dir.path().join(format!("sem{threads}.sghc"));
        let hier = dir.path().join(format!("hier{threads}.sghc"));
        let ids = dir.path().join(format!("ids{threads}.sgid"));
        let base = ["--threads", threads];
        sghc(
            &[
                &base[..],
                &[
                    "train-semantic",
                    "--corpus",
                    s(&corpus),
                    "--k",
                    "32",
                    "--m",
                    "4",
                    "--out",
                    s(&sem),
                ],
            ]
            .concat(),
        );
        sghc(
            &[
                &base[..],
                &[
                    "train-pixel",
                    "--corpus",
                    s(&corpus),
                    "--codebook",
                    s(&sem),
                    "--out",
                    s(&hier),
                ],
            ]
            .concat(),
        );
        let image = corpus.join("img0.pgm");
        sghc(
            &[
                &base[..],
                &[
                    "quantize",
                    "--image",
                    s(&image),
                    "--codebook",
                    s(&hier),
                    "--out",
                    s(&ids),
                ],
            ]
            .concat(),
        );
        artifacts.push([&sem, &hier, &ids].map(|p| std::fs::read(p).unwrap()));
    }
    let cli_invariant = artifacts[0] == artifacts[1];

    let cpus = std::thread::available_parallelism().map_or(1, |n| n.get());
    outcome(
        single >= 5000.0 && scaling >= 3.0 && invariant && cli_invariant,
        format!(
            "1 thread {single:.0} vec/s, 8 threads {eight:.0} vec/s, scaling {scaling:.2}x on {cpus} available CPU(s); outputs invariant in-process {invariant}, CLI {cli_invariant}"
        ),
    )
}

type Check = (&'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let checks: [Check; 11] = [
        ("quantizer oracle equivalence", quantizer_oracle),
        ("hierarchical conditioning", hierarchical_conditioning),
        ("EMA correctness and convergence", ema_and_convergence),
        ("decoupling guarantee", decoupling),
        ("flatten bijection", flatten_bijection),
        ("DCT fidelity", dct_fidelity),
        ("VRR ordering", vrr_ordering),
        ("reconstruction ordering", reconstruction_ordering),
        ("vocab-bridge consistency", vocab_bridge),
        ("usage reporting", usage_reporting),
        ("throughput", throughput),
    ];
    let mut failed = 0;
    for (n, (name, check)) in checks.iter().enumerate() {
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        failed += !result.pass as usize;
        let verdict = if result.pass { "PASS" } else { "FAIL" };
        println!("criterion {:>2} {verdict} {name}: {}", n + 1, result.detail);
    }
    println!("{} passed, {failed} failed", checks.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
