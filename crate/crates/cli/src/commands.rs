use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use satpm_core::dataset::{in_split, prepare, read_manifest, write_manifest, ManifestEntry, Split};
use satpm_core::eval::{
    classification_report, compare_models, confusion_csv, confusion_svg, export_differences, grad_cam,
    regression_report, scatter_csv, scatter_svg, CamTarget, ExportFormat, SiteInfo,
};
use satpm_core::geo::{grid_points, grid_spacing_m, tile_coverage_m};
use satpm_core::ingest::{
    assign_exposures, filter_records, parse_sites, write_sites, ExposurePolicy, LabeledSite,
};
use satpm_core::models::{argmax, image_to_tensor, Base, Head, Model};
use satpm_core::tiles::{
    cache_key, synthetic_sites, synthetic_tile, RetryPolicy, SyntheticLabels, TileFetcher, TileImage,
    TileRequest, UreqTransport,
};
use satpm_core::train::{
    load_checkpoint, load_samples, predict_classes, predict_pm25, read_leaderboard, table_rows, train_model,
    write_leaderboard, LeaderboardEntry, Sample,
};
use serde::Serialize;
use serde_json::json;

use crate::config::PipelineConfig;
use crate::error::CliError;
use crate::{
    BaseArg, Command, CompareArgs, EvalArgs, FetchArgs, FormatArg, GradcamArgs, GridArgs, HeadArg, IngestArgs,
    PolicyArg, ReportArgs, SplitArgs, SynthArgs, TrainArgs,
};

pub fn dispatch(command: Command, mut config: PipelineConfig) -> Result<(), CliError> {
    config.validate()?;
    match command {
        Command::Ingest(a) => ingest(a, &config),
        Command::Grid(a) => grid(a, &config),
        Command::Fetch(a) => fetch(a, &config),
        Command::Synth(a) => synth(a, &mut config),
        Command::Split(a) => split(a, &mut config),
        Command::Train(a) => train(a, &mut config),
        Command::Eval(a) => eval(a, &config),
        Command::Gradcam(a) => gradcam(a, &config),
        Command::Compare(a) => compare(a, &config),
        Command::Report(a) => report(a, &config),
    }
}

fn require(path: &Path, what: &str) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Config(format!("{what}: {} does not exist", path.display())))
    }
}

fn create_parent(path: &Path) -> Result<(), CliError> {
    match path.parent().filter(|d| !d.as_os_str().is_empty()) {
        Some(dir) => std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e)),
        None => Ok(()),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    create_parent(path)?;
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn open(path: &Path, what: &str) -> Result<BufReader<File>, CliError> {
    require(path, what)?;
    File::open(path).map(BufReader::new).map_err(|e| CliError::io(path, e))
}

fn read_bytes(path: &Path, what: &str) -> Result<Vec<u8>, CliError> {
    require(path, what)?;
    std::fs::read(path).map_err(|e| CliError::io(path, e))
}

fn emit(value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value)?;
    let mut out = std::io::stdout().lock();
    writeln!(out, "{text}").map_err(|e| CliError::io(Path::new("<stdout>"), e))
}

fn write_labeled(path: &Path, sites: &[LabeledSite]) -> Result<(), CliError> {
    let mut buf = Vec::new();
    for s in sites {
        serde_json::to_writer(&mut buf, s)?;
        buf.push(b'\n');
    }
    write_file(path, &buf)
}

fn read_labeled(path: &Path) -> Result<Vec<LabeledSite>, CliError> {
    let mut out = Vec::new();
    for (i, line) in open(path, "labelled sites")?.lines().enumerate() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let site = serde_json::from_str(&line)
            .map_err(|e| CliError::Invalid(format!("{} line {}: {e}", path.display(), i + 1)))?;
        out.push(site);
    }
    Ok(out)
}

fn load_manifest(path: &Path) -> Result<Vec<ManifestEntry>, CliError> {
    Ok(read_manifest(open(path, "manifest")?)?)
}

fn save_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<(), CliError> {
    let mut buf = Vec::new();
    write_manifest(entries, &mut buf)?;
    write_file(path, &buf)
}

fn load_model(path: &Path) -> Result<Model, CliError> {
    Ok(load_checkpoint(&read_bytes(path, "checkpoint")?)?)
}

fn parse_split(raw: &str) -> Result<Split, CliError> {
    raw.parse().map_err(CliError::Invalid)
}

fn split_summary(manifest: &[ManifestEntry]) -> serde_json::Value {
    let count = |s| manifest.iter().filter(|e| e.split == s).count();
    json!({
        "samples": manifest.len(),
        "train": count(Split::Train),
        "validation": count(Split::Validation),
        "test": count(Split::Test),
    })
}

fn ingest(a: IngestArgs, config: &PipelineConfig) -> Result<(), CliError> {
    let sites_path = a.sites.unwrap_or_else(|| config.paths.sites.clone());
    let out = a.out.unwrap_or_else(|| config.paths.labeled.clone());
    let policy = match a.policy {
        Some(PolicyArg::PerYear) => ExposurePolicy::PerYear,
        Some(PolicyArg::AveragedPerLocation) => ExposurePolicy::AveragedPerLocation,
        None => config.ingest.policy,
    };
    let exclude = config.ingest.exclude_pm10_derived && !a.keep_pm10_derived;
    let records = parse_sites(open(&sites_path, "sites")?)?;
    let total = records.len();
    let kept = filter_records(records, exclude);
    let labeled = assign_exposures(&kept, policy);
    log::info!("{total} records, {} kept, {} labelled sites", kept.len(), labeled.len());
    write_labeled(&out, &labeled)?;
    emit(&json!({ "records": total, "kept": kept.len(), "sites": labeled.len(), "out": out }))
}

fn grid(a: GridArgs, config: &PipelineConfig) -> Result<(), CliError> {
    let zoom = a.zoom.unwrap_or(config.zoom());
    let out = a.out.unwrap_or_else(|| config.paths.reports.join("grid.csv"));
    let points = grid_points(a.lat_min, a.lat_max, a.lon_min, a.lon_max, a.resolution)?;
    let mid_lat = (a.lat_min + a.lat_max) / 2.0;
    let coverage = tile_coverage_m(zoom, mid_lat, config.tiles.size_px)?;
    let spacing = grid_spacing_m(a.resolution, mid_lat);
    let mut csv = String::from("lat,lon\n");
    for (lat, lon) in &points {
        csv.push_str(&format!("{lat:.6},{lon:.6}\n"));
    }
    write_file(&out, csv.as_bytes())?;
    if spacing <= coverage {
        log::warn!("tiles overlap: spacing {spacing:.0} m, coverage {coverage:.0} m");
    }
    emit(&json!({
        "points": points.len(),
        "zoom": zoom,
        "spacing_m": spacing,
        "tile_coverage_m": coverage,
        "overlapping": spacing <= coverage,
        "out": out,
    }))
}

fn synthetic_labels(config: &PipelineConfig) -> SyntheticLabels {
    SyntheticLabels { max: config.synthetic.signal_max, ..SyntheticLabels::global() }
}

fn write_synthetic_tiles(
    sites: &[LabeledSite],
    config: &PipelineConfig,
    zoom: u32,
    size: u32,
    dir: &Path,
) -> Result<usize, CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let max = config.synthetic.signal_max;
    for s in sites {
        let req = TileRequest::with_any_zoom(s.lat, s.lon, zoom, size)?;
        let tile = synthetic_tile(config.synthetic.seed, &req, Some(s.label_pm25.min(max)), max)?;
        write_file(&dir.join(cache_key(zoom, s.lat, s.lon)), &tile.encode_png())?;
    }
    Ok(sites.len())
}

fn fetch(a: FetchArgs, config: &PipelineConfig) -> Result<(), CliError> {
    let labeled = a.labeled.unwrap_or_else(|| config.paths.labeled.clone());
    let dir = a.cache_dir.unwrap_or_else(|| config.paths.cache_dir.clone());
    let zoom = a.zoom.unwrap_or(config.zoom());
    let sites = read_labeled(&labeled)?;
    if a.synthetic || config.synthetic.enabled {
        let n = write_synthetic_tiles(&sites, config, zoom, config.synthetic.size_px, &dir)?;
        log::info!("synthesised {n} tiles into {}", dir.display());
        return emit(&json!({ "tiles": n, "failed": 0, "synthetic": true, "cache_dir": dir }));
    }
    let t = &config.tiles;
    let requests = sites
        .iter()
        .map(|s| Ok(TileRequest::new(s.lat, s.lon, zoom)?.with_size(t.size_px)))
        .collect::<Result<Vec<_>, CliError>>()?;
    let transport = UreqTransport::new(Duration::from_secs(t.timeout_secs));
    let fetcher = TileFetcher::new(t.base_url.clone(), t.resolve_api_key()?, &dir, Box::new(transport))?
        .with_retry(RetryPolicy { attempts: t.attempts, ..RetryPolicy::default() })
        .with_concurrency(t.concurrency);
    log::info!("fetching {} tiles at zoom {zoom}", requests.len());
    let results = fetcher.fetch_all(&requests);
    let mut failures = Vec::new();
    for (s, r) in sites.iter().zip(&results) {
        if let Err(e) = r {
            log::warn!("{}: {e}", s.site_id);
            failures.push(json!({ "site_id": s.site_id, "error": e.to_string() }));
        }
    }
    let failed = failures.len();
    emit(&json!({ "tiles": results.len() - failed, "failed": failed, "failures": failures, "cache_dir": dir }))?;
    if failed > 0 {
        return Err(CliError::External(format!("{failed} tiles could not be fetched")));
    }
    Ok(())
}

fn synth(a: SynthArgs, config: &mut PipelineConfig) -> Result<(), CliError> {
    if let Some(c) = a.count {
        config.synthetic.count = c;
    }
    if let Some(s) = a.seed {
        config.synthetic.seed = s;
    }
    if let Some(s) = a.size {
        config.synthetic.size_px = s;
    }
    let zoom = a.zoom.unwrap_or(config.zoom());
    let manifest_path = a.manifest.unwrap_or_else(|| config.paths.manifest.clone());
    let syn = &config.synthetic;
    if syn.count == 0 || syn.size_px == 0 {
        return Err(CliError::Config("synthetic.count and synthetic.size_px must be positive".into()));
    }
    let records = synthetic_sites(syn.count, syn.seed, &synthetic_labels(config));
    let mut csv = Vec::new();
    write_sites(&records, &mut csv)?;
    write_file(&config.paths.sites, &csv)?;
    let labeled = assign_exposures(&records, ExposurePolicy::PerYear);
    write_labeled(&config.paths.labeled, &labeled)?;
    let dir = config.paths.cache_dir.clone();
    write_synthetic_tiles(&labeled, config, zoom, config.synthetic.size_px, &dir)?;
    let (manifest, _, edges) = prepare(&labeled, config.split.ratios(), config.split.seed, zoom, &dir)?;
    save_manifest(&manifest_path, &manifest)?;
    log::info!("{} synthetic sites written", labeled.len());
    let mut summary = split_summary(&manifest);
    summary["manifest"] = json!(manifest_path);
    summary["decile_edges"] = json!(edges.map(|e| e.0));
    emit(&summary)
}

fn split(a: SplitArgs, config: &mut PipelineConfig) -> Result<(), CliError> {
    if let Some(seed) = a.seed {
        config.split.seed = seed;
    }
    if let Some((train, validation, test)) = a.ratios {
        config.split.train = train;
        config.split.validation = validation;
        config.split.test = test;
    }
    config.validate()?;
    let labeled = a.labeled.unwrap_or_else(|| config.paths.labeled.clone());
    let manifest_path = a.manifest.unwrap_or_else(|| config.paths.manifest.clone());
    let dir = a.cache_dir.unwrap_or_else(|| config.paths.cache_dir.clone());
    let zoom = a.zoom.unwrap_or(config.zoom());
    let sites = read_labeled(&labeled)?;
    let (manifest, assignment, edges) = prepare(&sites, config.split.ratios(), config.split.seed, zoom, &dir)?;
    save_manifest(&manifest_path, &manifest)?;
    log::info!("{} geohash groups assigned", assignment.groups.len());
    let mut summary = split_summary(&manifest);
    summary["groups"] = json!(assignment.groups.len());
    summary["manifest"] = json!(manifest_path);
    summary["decile_edges"] = json!(edges.map(|e| e.0));
    emit(&summary)
}

/// Replace the entry for the same run (base, zoom, optimizer, rate, checkpoint) so re-runs stay idempotent.
fn upsert(entries: &mut Vec<LeaderboardEntry>, entry: LeaderboardEntry) {
    let same = |e: &LeaderboardEntry| {
        e.base == entry.base
            && e.zoom == entry.zoom
            && e.optimizer == entry.optimizer
            && e.learning_rate == entry.learning_rate
            && e.metric == entry.metric
            && e.checkpoint_path == entry.checkpoint_path
    };
    match entries.iter().position(same) {
        Some(i) => entries[i] = entry,
        None => entries.push(entry),
    }
}

fn train(a: TrainArgs, config: &mut PipelineConfig) -> Result<(), CliError> {
    let m = &mut config.model;
    if let Some(b) = a.base {
        m.base = match b {
            BaseArg::Sepconv => Base::SepConv,
            BaseArg::Plain => Base::Plain,
        };
    }
    if let Some(h) = a.head {
        m.head = match h {
            HeadArg::Regression => Head::Regression,
            HeadArg::Decile10 => Head::Decile10,
        };
    }
    if let Some(v) = a.input_size {
        m.input_size = v;
    }
    if let Some(v) = a.dropout {
        m.dropout_rate = v;
    }
    if let Some(v) = a.model_seed {
        m.seed = v;
    }
    if let Some(v) = a.optimizer {
        config.optimizer.name = v;
    }
    if let Some(v) = a.lr {
        config.optimizer.learning_rate = v;
    }
    let t = &mut config.training;
    if let Some(v) = a.epochs {
        t.max_epochs = v;
    }
    if let Some(v) = a.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = a.seed {
        t.seed = v;
    }
    config.validate()?;
    let manifest_path = a.manifest.unwrap_or_else(|| config.paths.manifest.clone());
    let checkpoint = a.checkpoint.unwrap_or_else(|| config.paths.checkpoint.clone());
    let history_path = a.history.unwrap_or_else(|| config.paths.history.clone());
    let board_path = a.leaderboard.unwrap_or_else(|| config.paths.leaderboard.clone());
    let manifest = load_manifest(&manifest_path)?;
    let optimizer = config.optimizer.spec()?;
    log::info!(
        "training {:?}/{:?} with {} at {} for up to {} epochs",
        config.model.base,
        config.model.head,
        optimizer.kind.name(),
        optimizer.learning_rate,
        config.training.max_epochs
    );
    create_parent(&checkpoint)?;
    let run = train_model(&config.model, &manifest, optimizer, &config.training, Some(&checkpoint))?;

    let mut buf = Vec::new();
    run.history.write_jsonl(&mut buf)?;
    write_file(&history_path, &buf)?;
    let mut entries = if board_path.exists() { read_leaderboard(open(&board_path, "leaderboard")?)? } else { Vec::new() };
    upsert(&mut entries, run.leaderboard.clone());
    let mut buf = Vec::new();
    write_leaderboard(&entries, &mut buf)?;
    write_file(&board_path, &buf)?;
    log::info!("best epoch {} ({:.4})", run.leaderboard.best_epoch, run.leaderboard.best_metric);
    emit(&json!({
        "epochs": run.history.len(),
        "best_epoch": run.leaderboard.best_epoch,
        "best_metric": run.leaderboard.best_metric,
        "metric": run.leaderboard.metric,
        "checkpoint": checkpoint,
        "history": history_path,
        "leaderboard": board_path,
    }))
}

fn split_samples(manifest: &[ManifestEntry], split: Split, model: &Model) -> Result<Vec<Sample>, CliError> {
    let entries = in_split(manifest, split);
    if entries.is_empty() {
        return Err(CliError::Invalid(format!("{split} split is empty")));
    }
    Ok(load_samples(&entries, model.config.input_size)?)
}

fn eval(a: EvalArgs, config: &PipelineConfig) -> Result<(), CliError> {
    let split = parse_split(&a.split)?;
    let model = load_model(&a.checkpoint.unwrap_or_else(|| config.paths.checkpoint.clone()))?;
    let manifest = load_manifest(&a.manifest.unwrap_or_else(|| config.paths.manifest.clone()))?;
    let samples = split_samples(&manifest, split, &model)?;
    let reports = &config.paths.reports;
    let out = a.out.unwrap_or_else(|| reports.join(format!("eval_{split}.json")));
    let truths: Vec<f64> = samples.iter().map(|s| s.pm25).collect();
    log::info!("evaluating {} {split} samples", samples.len());
    let report = match model.config.head {
        Head::Regression => {
            let preds = predict_pm25(&model, &samples)?;
            let report = regression_report(&preds, &truths)?;
            write_file(&reports.join(format!("scatter_{split}.csv")), scatter_csv(&truths, &preds).as_bytes())?;
            let svg = scatter_svg(&truths, &preds, report.fit.as_ref());
            write_file(&reports.join(format!("scatter_{split}.svg")), svg.as_bytes())?;
            report
        }
        Head::Decile10 => {
            let classes = samples
                .iter()
                .enumerate()
                .map(|(i, s)| s.class.ok_or_else(|| CliError::Invalid(format!("sample {i} has no decile class"))))
                .collect::<Result<Vec<u8>, _>>()?;
            let preds = predict_classes(&model, &samples)?;
            let report = classification_report(&preds, &classes, &truths)?;
            let confusion = report.confusion.as_ref().expect("classification report has a confusion matrix");
            write_file(&reports.join(format!("confusion_{split}.csv")), confusion_csv(confusion).as_bytes())?;
            write_file(&reports.join(format!("confusion_{split}.svg")), confusion_svg(confusion).as_bytes())?;
            report
        }
    };
    write_file(&out, serde_json::to_string_pretty(&report)?.as_bytes())?;
    emit(&report)
}

fn gradcam(a: GradcamArgs, config: &PipelineConfig) -> Result<(), CliError> {
    let model = load_model(&a.checkpoint.unwrap_or_else(|| config.paths.checkpoint.clone()))?;
    let image = TileImage::decode_png(&read_bytes(&a.image, "image")?)?;
    let size = model.config.input_size as u32;
    let image = if image.width == size && image.height == size { image } else { image.resized(size) };
    let target = match (model.config.head, a.class) {
        (Head::Regression, None) => CamTarget::Output,
        (Head::Regression, Some(_)) => {
            return Err(CliError::Invalid("--class applies to decile checkpoints only".into()));
        }
        (Head::Decile10, Some(k)) => CamTarget::Class(k),
        (Head::Decile10, None) => {
            let probs = model.predict_probs(&image_to_tensor(&image))?;
            CamTarget::Class(argmax(&probs[0]) as u8 + 1)
        }
    };
    let heatmap = grad_cam(&model, &image, target)?;
    let out = a.out.unwrap_or_else(|| config.paths.reports.join("gradcam.json"));
    write_file(&out, serde_json::to_string(&heatmap)?.as_bytes())?;
    let gray: Vec<u8> = heatmap
        .values
        .iter()
        .flat_map(|&v| {
            let b = (v * 255.0).round().clamp(0.0, 255.0) as u8;
            [b, b, b]
        })
        .collect();
    let png = TileImage::new(heatmap.width as u32, heatmap.height as u32, gray)?.encode_png();
    let png_path: PathBuf = out.with_extension("png");
    write_file(&png_path, &png)?;
    let class = match target {
        CamTarget::Class(k) => Some(k),
        CamTarget::Output => None,
    };
    emit(&json!({ "class": class, "width": heatmap.width, "height": heatmap.height, "heatmap": out, "png": png_path }))
}

fn compare(a: CompareArgs, config: &PipelineConfig) -> Result<(), CliError> {
    let split = parse_split(&a.split)?;
    let model_a = load_model(&a.checkpoint_a)?;
    let model_b = load_model(&a.checkpoint_b)?;
    if model_a.config.head != Head::Regression || model_b.config.head != Head::Regression {
        return Err(CliError::Invalid("compare needs two regression checkpoints".into()));
    }
    let manifest = load_manifest(&a.manifest.unwrap_or_else(|| config.paths.manifest.clone()))?;
    let preds_a = predict_pm25(&model_a, &split_samples(&manifest, split, &model_a)?)?;
    let preds_b = predict_pm25(&model_b, &split_samples(&manifest, split, &model_b)?)?;
    // countries live in the labelled-site file, when it is around
    let countries: HashMap<String, String> = if config.paths.labeled.exists() {
        read_labeled(&config.paths.labeled)?.into_iter().map(|s| (s.site_id, s.country)).collect()
    } else {
        HashMap::new()
    };
    let sites: Vec<SiteInfo> = in_split(&manifest, split)
        .into_iter()
        .map(|e| SiteInfo { lat: e.lat, lon: e.lon, country: countries.get(&e.site_id).cloned().unwrap_or_default() })
        .collect();
    let report = compare_models(&preds_a, &preds_b, &sites)?;
    let dir = a.out_dir.unwrap_or_else(|| config.paths.reports.clone());
    let (format, ext) = match a.format {
        FormatArg::Csv => (ExportFormat::Csv, "csv"),
        FormatArg::Geojson => (ExportFormat::GeoJson, "geojson"),
    };
    let export = dir.join(format!("differences_{split}.{ext}"));
    write_file(&export, &export_differences(&report, format)?)?;
    let report_path = dir.join(format!("comparison_{split}.json"));
    write_file(&report_path, serde_json::to_string_pretty(&report)?.as_bytes())?;
    emit(&json!({
        "n": report.differences.len(),
        "fit": report.fit,
        "r2_cod": report.r2_cod,
        "r2_corr": report.r2_corr,
        "by_country": report.by_country.iter().take(10).collect::<Vec<_>>(),
        "report": report_path,
        "export": export,
    }))
}

fn report(a: ReportArgs, config: &PipelineConfig) -> Result<(), CliError> {
    let path = a.leaderboard.unwrap_or_else(|| config.paths.leaderboard.clone());
    let entries = read_leaderboard(open(&path, "leaderboard")?)?;
    let mut text = String::from("architecture / zoom / accuracy % / rmse\n");
    for row in table_rows(&entries) {
        text.push_str(&format!("{row}\n"));
    }
    let out = a.out.unwrap_or_else(|| config.paths.reports.join("leaderboard.txt"));
    write_file(&out, text.as_bytes())?;
    print!("{text}");
    Ok(())
}
