//! The six pipeline commands.

use std::path::{Path, PathBuf};

use fmapkit::convert::{fmap_to_pointmap, icp_refine, read_pointmap, write_pointmap, zoomout};
use fmapkit::eval::{mean_geodesic_error, write_curve_text, write_report, Report};
use fmapkit::features::{
    read_checkpoint, train_step, write_checkpoint, ExtractorNet, GridParams, ShapeInputs,
    TrainPair, TrainState,
};
use fmapkit::fmap::{
    gt_from_pointmap, gt_from_template, read_fmap, solve_regularized, write_fmap, FuncMap,
    GroundTruthMap, SolveContext,
};
use fmapkit::mesh::{build_hierarchy, Mesh};
use fmapkit::spectral::{
    hks, hks_default_times, project, reconstruct, wks, wks_default_params, DescriptorField,
    SpectralBasis,
};

use crate::cache::{load_or_compute_basis, load_shape_mesh, CacheOutcome};
use crate::config::{DescriptorConfig, PipelineConfig};
use crate::manifest::DatasetManifest;
use crate::CliError;

fn ensure_out_dir(out: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(out)
        .map_err(|e| CliError::usage(format!("cannot create output dir {}: {e}", out.display())))
}

pub fn cmd_precompute(manifest: &DatasetManifest, config: &PipelineConfig) -> Result<(), CliError> {
    let width = config.precompute_width();
    let mut computed = 0usize;
    let mut cached = 0usize;
    let mut failures = 0usize;
    for shape in &manifest.shapes {
        let mesh_path = manifest.resolve(&shape.mesh);
        match load_or_compute_basis(&shape.id, &mesh_path, config, width) {
            Ok((basis, _, CacheOutcome::Computed)) => {
                computed += 1;
                println!("{}: computed basis of width {}", shape.id, basis.k());
            }
            Ok((_, _, CacheOutcome::Hit)) => {
                cached += 1;
                println!("{}: cache up to date", shape.id);
            }
            Err(e) => {
                failures += 1;
                eprintln!("{}: {}", shape.id, e.message);
            }
        }
    }
    println!("{computed} computed, {cached} cached");
    if failures > 0 {
        return Err(CliError::computational(format!(
            "{failures} shape(s) failed to precompute"
        )));
    }
    Ok(())
}

/// Compute the configured descriptor field on one shape, using the basis
/// truncated to the matching width.
fn compute_descriptors(
    mesh: &Mesh,
    basis_k: &SpectralBasis,
    config: &PipelineConfig,
    checkpoint: Option<&Path>,
) -> Result<DescriptorField, CliError> {
    match &config.descriptor {
        DescriptorConfig::Hks { count } => {
            let times = hks_default_times(basis_k, *count);
            Ok(hks(basis_k, &times))
        }
        DescriptorConfig::Wks { count } => {
            let (energies, sigma) = wks_default_params(basis_k, *count)?;
            Ok(wks(basis_k, &energies, sigma)?)
        }
        DescriptorConfig::Xyz => Ok(fmapkit::spectral::xyz_descriptors(mesh)),
        DescriptorConfig::Learned { checkpoint: configured } => {
            let path = checkpoint
                .map(Path::to_path_buf)
                .or_else(|| configured.clone())
                .ok_or_else(|| {
                    CliError::usage("learned descriptors need a checkpoint (config or --checkpoint)".into())
                })?;
            let field = learned_descriptors(mesh, config, &path)?;
            Ok(field)
        }
    }
}

fn learned_descriptors(
    mesh: &Mesh,
    config: &PipelineConfig,
    checkpoint: &Path,
) -> Result<DescriptorField, CliError> {
    let net = ExtractorNet::new(config.extractor.clone())?;
    let (data, digest) = read_checkpoint(checkpoint)?;
    if digest != config.extractor_digest() {
        return Err(CliError::usage(format!(
            "checkpoint {} was written for a different extractor architecture",
            checkpoint.display()
        )));
    }
    if data.params.len() != net.param_count() {
        return Err(CliError::usage("checkpoint parameter count mismatch".into()));
    }
    let params: Vec<f64> = data.params.iter().map(|&p| p as f64).collect();
    let hierarchy = build_hierarchy(&mesh.point_cloud(), config.grid_base_cell, net.num_levels())?;
    let input = fmapkit::features::input_features(mesh);
    let (values, _) = net.forward(&params, &hierarchy, &input)?;
    Ok(DescriptorField {
        values,
        kind: fmapkit::spectral::DescriptorKind::Learned,
    })
}

pub struct MatchArgs<'a> {
    pub pair: &'a str,
    pub out: &'a Path,
    pub checkpoint: Option<&'a Path>,
    pub lambda_overridden: bool,
}

pub fn cmd_match(
    manifest: &DatasetManifest,
    config: &PipelineConfig,
    args: &MatchArgs<'_>,
) -> Result<(), CliError> {
    let pair = manifest.require_pair(args.pair)?;
    ensure_out_dir(args.out)?;

    let origin = if args.lambda_overridden { " (cli override)" } else { "" };
    println!("lambda = {}{}", config.lambda, origin);
    println!("k = {}", config.k);

    let src = manifest.require_shape(&pair.source)?;
    let tgt = manifest.require_shape(&pair.target)?;
    let (basis_m, mesh_m, _) =
        load_or_compute_basis(&src.id, &manifest.resolve(&src.mesh), config, config.k)?;
    let (basis_n, mesh_n, _) =
        load_or_compute_basis(&tgt.id, &manifest.resolve(&tgt.mesh), config, config.k)?;
    let bm = basis_m.truncated(config.k.min(basis_m.k()))?;
    let bn = basis_n.truncated(config.k.min(basis_n.k()))?;

    let f = compute_descriptors(&mesh_m, &bm, config, args.checkpoint)?;
    let g = compute_descriptors(&mesh_n, &bn, config, args.checkpoint)?;
    let a = project(&bm, &f)?;
    let b = project(&bn, &g)?;
    let mut ctx = SolveContext::new(a, b, bm.evals.clone(), bn.evals.clone(), config.lambda)?;
    let c = solve_regularized(&mut ctx)?;
    let t = fmap_to_pointmap(&c, &bm, &bn)?;

    let stem = format!("{}__{}", pair.source, pair.target);
    let fmap_path = args.out.join(format!("{stem}.fmap"));
    let p2p_path = args.out.join(format!("{stem}.p2p"));
    write_fmap(&fmap_path, &c)?;
    write_pointmap(&p2p_path, &t)?;
    println!("wrote {}", fmap_path.display());
    println!("wrote {}", p2p_path.display());
    Ok(())
}

/// Ground truth for a training pair at width `k`.
fn pair_ground_truth(
    manifest: &DatasetManifest,
    pair: &crate::manifest::PairEntry,
    basis_m: &SpectralBasis,
    basis_n: &SpectralBasis,
    k: usize,
) -> Result<GroundTruthMap, CliError> {
    if let Some(gt_path) = &pair.gt {
        let t = read_pointmap(&manifest.resolve(gt_path))?;
        let gt = gt_from_pointmap(&basis_m.truncated(k)?, &basis_n.truncated(k)?, &t)?;
        return Ok(gt);
    }
    if let (Some(src_path), Some(tgt_path)) = (&pair.template_map_source, &pair.template_map_target)
    {
        let c_i = read_fmap(&manifest.resolve(src_path))?;
        let c_j = read_fmap(&manifest.resolve(tgt_path))?;
        if c_i.source_k() < k || c_j.source_k() < k {
            return Err(CliError::usage(format!(
                "template maps for {} are narrower than k = {k}",
                pair.key()
            )));
        }
        let c_i = FuncMap::new(c_i.c.columns(0, k).into_owned());
        let c_j = FuncMap::new(c_j.c.columns(0, k).into_owned());
        return Ok(gt_from_template(&c_i, &c_j)?);
    }
    Err(CliError::usage(format!(
        "pair {} has no ground truth (needs `gt` or template maps)",
        pair.key()
    )))
}

/// Deterministic shuffled-epoch batching: global draw index `step * B + j`
/// walks a per-epoch permutation of the pair list.
fn batch_indices(step: u64, batch_size: usize, num_pairs: usize, seed: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut indices = Vec::with_capacity(batch_size);
    for j in 0..batch_size {
        let global = step * batch_size as u64 + j as u64;
        let epoch = global / num_pairs as u64;
        let pos = (global % num_pairs as u64) as usize;
        let mut order: Vec<usize> = (0..num_pairs).collect();
        let mut rng =
            rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ epoch.wrapping_mul(0x9e3779b97f4a7c15));
        order.shuffle(&mut rng);
        indices.push(order[pos]);
    }
    indices
}

pub struct TrainArgs<'a> {
    pub steps: u64,
    pub resume: Option<&'a Path>,
    pub out: &'a Path,
}

pub fn cmd_train(
    manifest: &DatasetManifest,
    config: &PipelineConfig,
    args: &TrainArgs<'_>,
) -> Result<(), CliError> {
    ensure_out_dir(args.out)?;
    let pairs: Vec<&crate::manifest::PairEntry> = manifest.pairs.iter().collect();
    if pairs.is_empty() {
        return Err(CliError::usage("manifest has no pairs to train on".into()));
    }
    for pair in &pairs {
        if !pair.has_ground_truth() {
            return Err(CliError::usage(format!(
                "training pair {} has no ground truth",
                pair.key()
            )));
        }
    }

    // Load every referenced shape once.
    let mut shape_data: Vec<(String, ShapeInputs)> = Vec::new();
    for shape in &manifest.shapes {
        let (basis, mesh, _) =
            load_or_compute_basis(&shape.id, &manifest.resolve(&shape.mesh), config, config.k)?;
        let k = config.k.min(basis.k());
        shape_data.push((
            shape.id.clone(),
            ShapeInputs {
                mesh,
                basis: basis.truncated(k)?,
            },
        ));
    }
    let shape_inputs = |id: &str| -> &ShapeInputs {
        &shape_data.iter().find(|(sid, _)| sid == id).expect("validated").1
    };

    let mut ground_truths: Vec<GroundTruthMap> = Vec::with_capacity(pairs.len());
    for pair in &pairs {
        let gt = pair_ground_truth(
            manifest,
            pair,
            &shape_inputs(&pair.source).basis,
            &shape_inputs(&pair.target).basis,
            config.k.min(shape_inputs(&pair.source).basis.k()),
        )?;
        ground_truths.push(gt);
    }

    let net = ExtractorNet::new(config.extractor.clone())?;
    let digest = config.extractor_digest();
    let mut state = match args.resume {
        Some(path) => {
            let (data, stored) = read_checkpoint(path)?;
            if stored != digest {
                return Err(CliError::usage(format!(
                    "checkpoint {} does not match the configured extractor",
                    path.display()
                )));
            }
            let total = data.step + args.steps;
            TrainState::from_checkpoint(
                data,
                config.seed,
                config.train.lr_initial,
                config.train.lr_final,
                total,
            )
        }
        None => TrainState::new(
            &net,
            config.seed,
            config.train.lr_initial,
            config.train.lr_final,
            args.steps,
        ),
    };

    let grid = GridParams {
        base_cell: config.grid_base_cell,
    };
    let log_path = args.out.join("train_log.csv");
    let mut log = std::io::BufWriter::new(
        std::fs::File::create(&log_path)
            .map_err(|e| CliError::usage(format!("cannot create {}: {e}", log_path.display())))?,
    );
    use std::io::Write;
    writeln!(log, "step,loss,lr").map_err(|e| CliError::computational(e.to_string()))?;

    let checkpoint_path = args.out.join("checkpoint.kpw");
    let end_step = state.step + args.steps;
    while state.step < end_step {
        let batch = batch_indices(state.step, config.train.batch_size, pairs.len(), config.seed);
        let train_pairs: Vec<TrainPair<'_>> = batch
            .iter()
            .map(|&i| TrainPair {
                source: shape_inputs(&pairs[i].source),
                target: shape_inputs(&pairs[i].target),
                gt: &ground_truths[i],
            })
            .collect();
        let lr = fmapkit::features::learning_rate(&state);
        let loss = train_step(
            &net,
            &mut state,
            &train_pairs,
            config.lambda,
            grid,
            config.train.augment,
        )?;
        writeln!(log, "{},{},{}", state.step - 1, loss, lr)
            .map_err(|e| CliError::computational(e.to_string()))?;
        if config.train.checkpoint_every > 0 && state.step % config.train.checkpoint_every == 0 {
            write_checkpoint(
                args.out.join(format!("checkpoint_step{}.kpw", state.step)),
                &state,
                &digest,
            )?;
        }
    }
    log.flush().map_err(|e| CliError::computational(e.to_string()))?;
    write_checkpoint(&checkpoint_path, &state, &digest)?;
    println!("trained {} steps, wrote {}", args.steps, checkpoint_path.display());
    Ok(())
}

pub struct RefineArgs<'a> {
    pub pair: &'a str,
    pub input: &'a Path,
    pub method: &'a str,
    pub iterations: Option<usize>,
    pub out: &'a Path,
}

pub fn cmd_refine(
    manifest: &DatasetManifest,
    config: &PipelineConfig,
    args: &RefineArgs<'_>,
) -> Result<(), CliError> {
    let pair = manifest.require_pair(args.pair)?;
    ensure_out_dir(args.out)?;

    let width_needed = match args.method {
        "zoomout" => config.zoomout.target,
        "icp" => config.k,
        other => return Err(CliError::usage(format!("unknown method {other:?} (icp or zoomout)"))),
    };
    let src = manifest.require_shape(&pair.source)?;
    let tgt = manifest.require_shape(&pair.target)?;
    let (basis_m, _, _) =
        load_or_compute_basis(&src.id, &manifest.resolve(&src.mesh), config, width_needed)?;
    let (basis_n, _, _) =
        load_or_compute_basis(&tgt.id, &manifest.resolve(&tgt.mesh), config, width_needed)?;

    let c0 = load_map_file(args.input, &basis_m, &basis_n, config.k)?;
    let refined = match args.method {
        "icp" => {
            let iterations = args.iterations.unwrap_or(config.icp_iterations);
            icp_refine(&c0, &basis_m, &basis_n, iterations)?
        }
        "zoomout" => {
            let target = config.zoomout.target.min(basis_m.k()).min(basis_n.k());
            if target < c0.source_k() {
                return Err(CliError::usage(format!(
                    "bases too narrow for ZoomOut: have {}, map starts at {}",
                    target,
                    c0.source_k()
                )));
            }
            zoomout(&c0, &basis_m, &basis_n, target, config.zoomout.step)?
        }
        _ => unreachable!(),
    };

    let stem = args
        .input
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("map");
    let fmap_path = args.out.join(format!("{stem}_refined.fmap"));
    let p2p_path = args.out.join(format!("{stem}_refined.p2p"));
    write_fmap(&fmap_path, &refined)?;
    let k = refined.source_k();
    let t = fmap_to_pointmap(&refined, &basis_m.truncated(k)?, &basis_n.truncated(k)?)?;
    write_pointmap(&p2p_path, &t)?;
    println!("wrote {}", fmap_path.display());
    println!("wrote {}", p2p_path.display());
    Ok(())
}

/// Load a refinement input: an `FMAP` file directly, or a `P2P` file
/// converted to a functional map at width `k`.
fn load_map_file(
    path: &Path,
    basis_m: &SpectralBasis,
    basis_n: &SpectralBasis,
    k: usize,
) -> Result<FuncMap, CliError> {
    let head = {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read {}: {e}", path.display())))?;
        text.lines().next().unwrap_or("").to_string()
    };
    if head.starts_with("FMAP") {
        Ok(read_fmap(path)?)
    } else if head.starts_with("P2P") {
        let t = read_pointmap(path)?;
        let k = k.min(basis_m.k()).min(basis_n.k());
        Ok(gt_from_pointmap(&basis_m.truncated(k)?, &basis_n.truncated(k)?, &t)?.map)
    } else {
        Err(CliError::usage(format!(
            "{} is neither an FMAP nor a P2P file",
            path.display()
        )))
    }
}

pub struct EvalArgs<'a> {
    pub pred: &'a Path,
    pub gt: &'a Path,
    pub mesh: &'a Path,
    pub out: &'a Path,
}

pub fn cmd_eval(config: &PipelineConfig, args: &EvalArgs<'_>) -> Result<(), CliError> {
    let pred = read_pointmap(args.pred)?;
    let gt = read_pointmap(args.gt)?;
    let mesh = load_shape_mesh(args.mesh, config)?;
    let stats = mean_geodesic_error(&pred, &gt, &mesh)?;

    let thresholds: Vec<f64> = (0..config.eval_thresholds.count)
        .map(|i| {
            config.eval_thresholds.max * (i + 1) as f64 / config.eval_thresholds.count as f64
        })
        .collect();
    let report = Report::from_stats(&stats, &thresholds);

    ensure_out_dir(args.out)?;
    let report_path = args.out.join("report.json");
    let curve_path = args.out.join("curve.txt");
    write_report(&report_path, &report)?;
    write_curve_text(&curve_path, &report)?;
    println!("mean geodesic error (x100): {}", report.mean_error_x100);
    if report.excluded_vertices > 0 {
        println!("excluded {} unreachable vertices", report.excluded_vertices);
    }
    Ok(())
}

pub struct ExportArgs<'a> {
    pub shape: &'a str,
    pub checkpoint: &'a Path,
    pub channels: &'a [usize],
    pub out: &'a Path,
}

pub fn cmd_export_descriptors(
    manifest: &DatasetManifest,
    config: &PipelineConfig,
    args: &ExportArgs<'_>,
) -> Result<(), CliError> {
    let shape = manifest.require_shape(args.shape)?;
    ensure_out_dir(args.out)?;
    let (basis, mesh, _) =
        load_or_compute_basis(&shape.id, &manifest.resolve(&shape.mesh), config, config.k)?;
    let bk = basis.truncated(config.k.min(basis.k()))?;
    let field = learned_descriptors(&mesh, config, args.checkpoint)?;
    for &channel in args.channels {
        if channel >= field.d() {
            return Err(CliError::usage(format!(
                "channel {channel} out of range (descriptor has {} channels)",
                field.d()
            )));
        }
    }

    // Spectral reconstruction of the whole field, then per-channel export.
    let coeffs = project(&bk, &field)?;
    let recon = reconstruct(&bk, &coeffs)?;
    for &channel in args.channels {
        let raw_path = args.out.join(format!("{}_ch{}.txt", shape.id, channel));
        let recon_path = args.out.join(format!("{}_ch{}_recon.txt", shape.id, channel));
        write_scalar_column(&raw_path, &field.values.column(channel))?;
        write_scalar_column(&recon_path, &recon.values.column(channel))?;
        println!("wrote {}", raw_path.display());
        println!("wrote {}", recon_path.display());
    }
    Ok(())
}

fn write_scalar_column(
    path: &PathBuf,
    column: &nalgebra::DVectorView<'_, f64>,
) -> Result<(), CliError> {
    use std::io::Write;
    let mut out = std::io::BufWriter::new(
        std::fs::File::create(path)
            .map_err(|e| CliError::usage(format!("cannot create {}: {e}", path.display())))?,
    );
    for v in column.iter() {
        writeln!(out, "{v}").map_err(|e| CliError::computational(e.to_string()))?;
    }
    out.flush().map_err(|e| CliError::computational(e.to_string()))?;
    Ok(())
}
