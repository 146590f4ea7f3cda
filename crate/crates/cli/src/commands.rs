use std::fs;
use std::path::{Path, PathBuf};

use sghc::analysis::{
    reconstruction_metrics, vrr_experiment, VarianceKind, VrrExperimentConfig, VrrOptions, Weighting,
};
use sghc::corpus::synthetic_image;
use sghc::features::{
    center_crop, load_image, paired_features, pixel_features, reconstruct_image, reconstruct_low_band, save_pgm,
};
use sghc::io::{
    load_codebook, load_features, load_ids, save_codebook, save_features, save_ids, semantic_section_bytes,
};
use sghc::quantizer::{dequantize_parts, HierarchicalQuantizer};
use sghc::trainer::{compute_usage, train_pixel_subcodebooks, train_semantic_codebook, InitMethod};
use sghc::vocab::{
    assemble_stream, export_embedding_table, frame_image, parse_frame, split_stream, token_string, IdLayout,
};
use sghc::{
    Error, FeatureGrid, FrameMode, GrayImage, HierarchicalCodebook, PatchSpec, Result, SemanticCodebook, TrainConfig,
};
use sha2::{Digest, Sha256};

use crate::args::*;

fn spec_of(args: &FeatureArgs) -> Result<PatchSpec> {
    let spec = PatchSpec::new(args.patch)?;
    if args.low == 0 || args.low > args.patch {
        return Err(Error::Argument(format!(
            "--low {} must lie in 1..={}",
            args.low, args.patch
        )));
    }
    Ok(spec)
}

fn train_config(t: &TrainingArgs, k: usize, m: usize) -> Result<TrainConfig> {
    let cfg = TrainConfig {
        k,
        m,
        momentum: t.momentum,
        epochs: t.epochs,
        batch_size: t.batch_size,
        seed: t.seed,
        dead_code_epochs: t.dead_code_epochs,
        init: match t.init {
            InitArg::KMeansPlusPlus => InitMethod::KMeansPlusPlus,
            InitArg::Random => InitMethod::RandomSample,
        },
        ..TrainConfig::default()
    };
    cfg.validate()?;
    Ok(cfg)
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io_at(path, e))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn semantic_digest(sem: &SemanticCodebook) -> String {
    hex(&Sha256::digest(semantic_section_bytes(sem)))
}

/// PGM/PPM files of `dir` in name order.
pub fn load_corpus(dir: &Path) -> Result<Vec<(PathBuf, GrayImage)>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .and_then(|entries| entries.map(|e| e.map(|e| e.path())).collect::<std::io::Result<_>>())
        .map_err(|e| Error::io_at(dir, e))?;
    paths.retain(|p| {
        p.extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "pgm" | "ppm" | "pnm"))
    });
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Data(format!("no PGM/PPM images in {}", dir.display())));
    }
    paths
        .into_iter()
        .map(|p| {
            let img = load_image(&p)?;
            Ok((p, img))
        })
        .collect()
}

fn corpus_features(
    images: &[(PathBuf, GrayImage)],
    spec: PatchSpec,
    low: usize,
) -> Result<(Vec<FeatureGrid>, Vec<FeatureGrid>)> {
    images
        .iter()
        .map(|(_, img)| paired_features(img, spec, low))
        .collect::<Result<Vec<_>>>()
        .map(|v| v.into_iter().unzip())
}

fn check_dim(what: &str, found: usize, expected: usize) -> Result<()> {
    if found != expected {
        return Err(Error::Shape(format!(
            "{what} has dimension {found}, codebook expects {expected}"
        )));
    }
    Ok(())
}

pub fn train_semantic(a: &TrainSemanticArgs) -> Result<()> {
    let spec = spec_of(&a.features_spec)?;
    let cfg = train_config(&a.training, a.k, a.m)?;
    let sem: Vec<FeatureGrid> = match &a.corpus {
        Some(dir) => corpus_features(&load_corpus(dir)?, spec, a.features_spec.low)?.0,
        None => a.features.iter().map(load_features).collect::<Result<_>>()?,
    };
    let patches: usize = sem.iter().map(|g| g.cells()).sum();
    println!(
        "patches={patches} k={} dim_sem={}",
        cfg.k,
        sem.first().map_or(0, |g| g.dim())
    );
    let report = train_semantic_codebook(&sem, &cfg, |m| println!("semantic {m}"))?;
    let hier = HierarchicalCodebook::with_zero_subs(report.codebook, cfg.m, spec.dim())?;
    save_codebook(&hier, &a.out)?;
    let usage = report.metrics.last().map_or(0.0, |m| m.usage_percent);
    println!("usage_percent={usage}");
    println!("semantic_sha256={}", semantic_digest(hier.semantic()));
    println!("wrote {}", a.out.display());
    Ok(())
}

pub fn train_pixel(a: &TrainPixelArgs) -> Result<()> {
    let spec = spec_of(&a.features_spec)?;
    let input = load_codebook(&a.codebook)?;
    let cfg = train_config(&a.training, input.k(), input.m())?;
    check_dim("pixel features", spec.dim(), input.dim_pix())?;
    let images = load_corpus(&a.corpus)?;
    let (sem, pix) = if a.sem_features.is_empty() {
        corpus_features(&images, spec, a.features_spec.low)?
    } else {
        if a.sem_features.len() != images.len() {
            return Err(Error::Shape(format!(
                "{} semantic feature files for {} images",
                a.sem_features.len(),
                images.len()
            )));
        }
        let sem = a.sem_features.iter().map(load_features).collect::<Result<Vec<_>>>()?;
        let pix = images
            .iter()
            .map(|(_, img)| pixel_features(img, spec))
            .collect::<Result<Vec<_>>>()?;
        (sem, pix)
    };
    check_dim("semantic features", sem[0].dim(), input.dim_sem())?;

    let before = semantic_digest(input.semantic());
    let report = train_pixel_subcodebooks(&sem, &pix, input.semantic(), &cfg, |m| println!("pixel {m}"))?;
    save_codebook(&report.codebook, &a.out)?;
    let after = semantic_digest(load_codebook(&a.out)?.semantic());
    println!("semantic_sha256_before={before}");
    println!("semantic_sha256_after={after}");
    println!("semantic unchanged: {}", before == after);
    if before != after {
        return Err(Error::Contract("pixel training modified the semantic codebook".into()));
    }
    println!("wrote {}", a.out.display());
    Ok(())
}

fn layout_for(hier: &HierarchicalCodebook, text_vocab: u32) -> Result<IdLayout> {
    IdLayout::unified(text_vocab, hier.flat_vocab_size() as u32)
}

pub fn quantize(a: &QuantizeArgs) -> Result<()> {
    let spec = spec_of(&a.features_spec)?;
    let hier = load_codebook(&a.codebook)?;
    let layout = layout_for(&hier, a.text_vocab)?;
    let img = load_image(&a.image)?;
    let (sem, pix) = match &a.sem_features {
        None => paired_features(&img, spec, a.features_spec.low)?,
        Some(path) => {
            let sem = load_features(path)?;
            let pix = pixel_features(&img, spec)?;
            if !sem.same_layout(&pix) {
                return Err(Error::Shape(format!(
                    "semantic grid {}x{} does not match the {}x{} patch grid",
                    sem.height(),
                    sem.width(),
                    pix.height(),
                    pix.width()
                )));
            }
            (sem, pix)
        }
    };
    let q = HierarchicalQuantizer::new(&hier)?.quantize(&sem, &pix)?;
    let mode = match a.mode {
        ModeArg::Generation => FrameMode::Generation,
        ModeArg::Understanding => FrameMode::Understanding,
    };
    let frame = frame_image(&q.tokens, mode);
    let ids = assemble_stream(&[], std::slice::from_ref(&frame), &layout)?.ids;
    save_ids(&ids, &a.out)?;
    if let Some(text) = &a.text {
        write_file(text, frame.to_text())?;
    }
    let cells = q.tokens.len() as f64;
    println!(
        "grid={}x{} tokens={} ids={}",
        q.tokens.height(),
        q.tokens.width(),
        q.tokens.len(),
        ids.len()
    );
    println!(
        "sem_distortion={} pix_distortion={}",
        q.sem_sq_dist.iter().sum::<f64>() / cells,
        q.pix_sq_dist.iter().sum::<f64>() / cells
    );
    println!("wrote {}", a.out.display());
    Ok(())
}

pub fn reconstruct(a: &ReconstructArgs) -> Result<()> {
    let spec = spec_of(&a.features_spec)?;
    let hier = load_codebook(&a.codebook)?;
    let layout = layout_for(&hier, a.text_vocab)?;
    let (_, frames) = split_stream(&load_ids(&a.tokens)?, &layout)?;
    let [frame] = &frames[..] else {
        return Err(Error::Frame(format!(
            "token file holds {} image segments, expected 1",
            frames.len()
        )));
    };
    let count = frame.atoms().len().saturating_sub(2);
    let width = match a.width {
        Some(w) => w,
        None => {
            let side = (count as f64).sqrt().round() as usize;
            if side * side != count {
                return Err(Error::Frame(format!(
                    "{count} tokens do not form a square grid; pass --width"
                )));
            }
            side
        }
    };
    if width == 0 || count % width != 0 {
        return Err(Error::Frame(format!(
            "{count} tokens do not fill rows of width {width}"
        )));
    }
    let tokens = parse_frame(frame, count / width, width, hier.m() as u32)?;
    let (sem, pix) = dequantize_parts(&tokens, &hier)?;
    let img = if a.semantic_only {
        let low = a.features_spec.low;
        check_dim("low band", low * low, hier.dim_sem())?;
        reconstruct_low_band(&sem, spec, low)?
    } else {
        reconstruct_image(&pix, spec)?
    };
    save_pgm(&img, &a.out)?;
    println!("image={}x{}", img.height(), img.width());
    if let Some(reference) = &a.reference {
        let target = center_crop(&load_image(reference)?, spec)?;
        println!("{}", reconstruction_metrics(&target, &img)?);
    }
    println!("wrote {}", a.out.display());
    Ok(())
}

pub fn vrr(a: &VrrArgs) -> Result<()> {
    let spec = spec_of(&a.features_spec)?;
    if a.seeds.is_empty() {
        return Err(Error::Argument("--seeds needs at least one seed".into()));
    }
    let hier = load_codebook(&a.codebook)?;
    let images: Vec<GrayImage> = load_corpus(&a.corpus)?.into_iter().map(|(_, img)| img).collect();
    let cfg = VrrExperimentConfig {
        spec,
        low: a.features_spec.low,
        seeds: a.seeds.clone(),
        options: VrrOptions {
            weighting: if a.pooled {
                Weighting::Pooled
            } else {
                Weighting::Unweighted
            },
            variance: if a.population {
                VarianceKind::Population
            } else {
                VarianceKind::Sample
            },
            exclude_dc: a.exclude_dc,
        },
        kmeans_iters: a.kmeans_iters,
        kmeans_seed: a.seed,
    };
    let report = vrr_experiment(&images, &hier, &cfg)?;
    let records = report.to_records();
    print!("{records}");
    if let Some(out) = &a.out {
        write_file(out, &records)?;
    }
    if let Some(table) = &a.table {
        write_file(table, report.to_table('\t'))?;
    }
    Ok(())
}

pub fn export_vocab(a: &ExportVocabArgs) -> Result<()> {
    let hier = load_codebook(&a.codebook)?;
    let table = export_embedding_table(&hier);
    let grid = FeatureGrid::new(table.rows(), 1, table.dim(), table.data().to_vec())?;
    save_features(&grid, &a.out)?;
    let manifest = a.manifest.clone().unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".tokens.tsv");
        PathBuf::from(p)
    });
    let m = hier.m();
    let mut text = String::from("h\ttoken\tsem\tpix\n");
    for h in 0..table.rows() {
        text.push_str(&format!(
            "{h}\t{}\t{}\t{}\n",
            token_string(h as u32, table.rows() as u32)?,
            h / m,
            h % m
        ));
    }
    write_file(&manifest, text)?;
    println!(
        "rows={} dim={} dim_sem={} dim_pix={}",
        table.rows(),
        table.dim(),
        table.dim_sem(),
        table.dim_pix()
    );
    println!("wrote {}", a.out.display());
    println!("wrote {}", manifest.display());
    Ok(())
}

pub fn stats(a: &StatsArgs) -> Result<()> {
    let hier = load_codebook(&a.codebook)?;
    println!("k={}", hier.k());
    println!("m={}", hier.m());
    println!("dim_sem={}", hier.dim_sem());
    println!("dim_pix={}", hier.dim_pix());
    println!("flat_vocab_size={}", hier.flat_vocab_size());
    println!("momentum={}", hier.momentum());
    println!("semantic_frozen={}", hier.semantic().is_frozen());
    println!("semantic_sha256={}", semantic_digest(hier.semantic()));
    if let Some(dir) = &a.corpus {
        let spec = spec_of(&a.features_spec)?;
        let images = load_corpus(dir)?;
        let (sem, pix) = corpus_features(&images, spec, a.features_spec.low)?;
        let quantizer = HierarchicalQuantizer::new(&hier)?;
        let mut sem_idx = Vec::new();
        let mut flat_idx = Vec::new();
        for (s, p) in sem.iter().zip(&pix) {
            let q = quantizer.quantize(s, p)?;
            sem_idx.extend_from_slice(q.tokens.sem_idx());
            flat_idx.extend_from_slice(q.tokens.flat_idx());
        }
        let su = compute_usage(&sem_idx, hier.k());
        let fu = compute_usage(&flat_idx, hier.flat_vocab_size());
        println!("patches={}", sem_idx.len());
        println!("semantic.used_codes={}", su.used_codes());
        println!("semantic.usage_percent={}", su.usage_percent);
        println!("hierarchical.used_codes={}", fu.used_codes());
        println!("hierarchical.usage_percent={}", fu.usage_percent);
    }
    Ok(())
}

pub fn synth_corpus(a: &SynthCorpusArgs) -> Result<()> {
    fs::create_dir_all(&a.out).map_err(|e| Error::io_at(&a.out, e))?;
    let width = a.count.max(1).to_string().len();
    for i in 0..a.count {
        let img = synthetic_image(a.seed, i as u64, a.size)?;
        save_pgm(&img, a.out.join(format!("img{i:0width$}.pgm")))?;
    }
    println!("wrote {} images to {}", a.count, a.out.display());
    Ok(())
}
