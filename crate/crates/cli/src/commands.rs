use std::path::Path;

use neomtl::attrib::{grad_cam_features_with, render_top_k, AttributionMode};
use neomtl::dataset::{
    parse_schema, preprocess, read_csv, schema_to_json, transform_with, Dataset, Normalizer,
    PreprocessOptions, RawTable,
};
use neomtl::network::ModelFile;
use neomtl::report::outcome_report;
use neomtl::synth::{generate, SynthConfig};
use neomtl::train::{
    cross_validate, cross_validate_single_task, grid_search, render_table, train_model, CvReport,
    SearchSpace,
};
use serde::Serialize;
use serde_json::json;

use crate::config::{parse_json, task_index, ExperimentConfig};
use crate::error::{CliError, CliResult};
use crate::manifest::Run;
use crate::{
    AttributeArgs, Command, CvArgs, DataArgs, GridArgs, Mode, PreprocessArgs, ReportArgs,
    SynthArgs, TrainArgs,
};

pub fn run(command: Command) -> CliResult<()> {
    match command {
        Command::Synth(a) => synth(a),
        Command::Preprocess(a) => preprocess_cmd(a),
        Command::Train(a) => train(a),
        Command::Cv(a) => cv(a),
        Command::Gridsearch(a) => gridsearch(a),
        Command::Attribute(a) => attribute(a),
        Command::Report(a) => report(a),
    }
}

fn pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("output serializes");
    s.push('\n');
    s
}

fn csv_text(table: &RawTable) -> CliResult<String> {
    let mut buf = Vec::new();
    table.write_csv(&mut buf)?;
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}

fn with_path<T>(path: &Path, r: neomtl::Result<T>) -> CliResult<T> {
    r.map_err(|e| match e {
        e if e.is_numerical() => CliError::Core(e),
        e => CliError::Input {
            path: path.to_path_buf(),
            message: e.to_string(),
        },
    })
}

fn load_table(run: &mut Run, input: &DataArgs) -> CliResult<RawTable> {
    let schema_text = run.read(&input.schema)?;
    let schema = with_path(&input.schema, parse_schema(&schema_text))?;
    let data_text = run.read(&input.data)?;
    with_path(&input.data, read_csv(data_text.as_bytes(), &schema))
}

/// Complete table to features and outcomes, keeping feature scales.
fn load_dataset(run: &mut Run, input: &DataArgs) -> CliResult<Dataset> {
    let table = load_table(run, input)?;
    with_path(&input.data, transform_with(&table, false))
}

fn synth(a: SynthArgs) -> CliResult<()> {
    let mut run = Run::start("synth", &a.out)?;
    let text = run.read(&a.config)?;
    let mut config: SynthConfig = parse_json(&text, &a.config)?;
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    run.seed(config.seed);
    run.config(json!(config));
    let out = generate(&config)?;
    run.write("data.csv", &csv_text(&out.to_raw_table())?)?;
    run.write("schema.json", &schema_to_json(&out.dataset.schema()))?;
    run.write("truth.json", &pretty(&out.truth))?;
    println!(
        "wrote {} rows x {} features, tasks {}, {} masked cells to {}",
        out.dataset.n_samples(),
        out.dataset.n_features(),
        out.truth.task_names.join(", "),
        out.mask.len(),
        a.out.display()
    );
    run.finish()
}

fn preprocess_cmd(a: PreprocessArgs) -> CliResult<()> {
    let mut run = Run::start("preprocess", &a.out)?;
    let opts = PreprocessOptions {
        max_missing_frac: a.max_missing_frac,
        mice_sweeps: a.mice_sweeps,
        mice_tol: a.mice_tol,
        normalize: !a.no_normalize,
    };
    run.config(json!(opts));
    let raw = load_table(&mut run, &a.input)?;
    let (dataset, cleaning, imputation) = with_path(&a.input.data, preprocess(&raw, &opts))?;
    run.write("data.csv", &csv_text(&dataset.to_table())?)?;
    run.write("schema.json", &schema_to_json(&dataset.schema()))?;
    run.write("cleaning_report.json", &pretty(&cleaning))?;
    run.write("imputation.json", &pretty(&imputation))?;
    run.write(
        "normalization.json",
        &pretty(&json!({
            "feature_names": dataset.feature_names,
            "stats": dataset.normalization_stats,
        })),
    )?;
    println!(
        "{} rows, {} features; dropped {} columns and {} duplicate rows; imputed {} cells",
        dataset.n_samples(),
        dataset.n_features(),
        cleaning.dropped_columns.len(),
        cleaning.duplicates_removed,
        imputation.numeric_cells + imputation.categorical_cells
    );
    run.finish()
}

fn train(a: TrainArgs) -> CliResult<()> {
    let mut run = Run::start("train", &a.out)?;
    run.seed(a.seed);
    let text = run.read(&a.config)?;
    let experiment: ExperimentConfig = parse_json(&text, &a.config)?;
    let mut dataset = load_dataset(&mut run, &a.input)?;
    let mut config = experiment.train_config(&dataset, a.seed)?;
    if let Some(task) = &a.task {
        let t = task_index(&dataset, task)?;
        config = config.single_task(t)?;
        dataset = dataset.select_tasks(&[t]);
    }
    run.config(json!({ "train": config, "task": a.task }));

    let all: Vec<usize> = (0..dataset.n_samples()).collect();
    let norm = Normalizer::fit(&dataset.features, &all)?;
    let normalized = dataset.with_features(norm.apply(&dataset.features)?, norm.stats.clone());
    let (state, history) = train_model(&normalized, &config)?;

    let mut file = ModelFile::new(&state);
    file.normalization_stats = Some(norm.stats);
    file.feature_names = Some(dataset.feature_names.clone());
    file.task_names = Some(dataset.task_names().iter().map(|s| s.to_string()).collect());
    run.write("model.json", &file.to_json())?;
    run.write("history.json", &pretty(&history))?;
    if let Some(last) = history.last() {
        println!(
            "trained {} epochs; final training loss {:.6} ({})",
            history.len(),
            last.total_loss,
            dataset
                .task_names()
                .iter()
                .zip(&last.task_losses)
                .map(|(t, l)| format!("{t} {l:.6}"))
                .collect::<Vec<_>>()
                .join(", ")
        );
    }
    run.finish()
}

fn cv(a: CvArgs) -> CliResult<()> {
    let mut run = Run::start("cv", &a.out)?;
    run.seed(a.seed);
    let text = run.read(&a.config)?;
    let experiment: ExperimentConfig = parse_json(&text, &a.config)?;
    let dataset = load_dataset(&mut run, &a.input)?;
    let config = experiment.train_config(&dataset, a.seed)?;
    let k = a.folds as usize;
    run.config(json!({
        "train": config,
        "folds": k,
        "task": a.task,
        "baseline": a.baseline,
    }));

    let table = if let Some(task) = &a.task {
        let t = task_index(&dataset, task)?;
        let report = cross_validate_single_task(&dataset, &config, t, k, a.seed)?;
        run.write("cv_report.json", &report.to_json())?;
        report.render_table(&format!("single-task {task}"))
    } else {
        let report = cross_validate(&dataset, &config, k, a.seed)?;
        run.write("cv_report.json", &report.to_json())?;
        if a.baseline {
            let mut merged: CvReport = report.clone();
            merged.summary.clear();
            for (t, name) in dataset.task_names().iter().enumerate() {
                let single = cross_validate_single_task(&dataset, &config, t, k, a.seed)?;
                run.write(&format!("baseline_{name}.json"), &single.to_json())?;
                merged.summary.push(single.summary[0].clone());
            }
            render_table(&[("multi-task", &report), ("single-task", &merged)])
        } else {
            report.render_table("multi-task")
        }
    };
    run.write("cv_table.txt", &table)?;
    print!("{table}");
    run.finish()
}

fn gridsearch(a: GridArgs) -> CliResult<()> {
    let mut run = Run::start("gridsearch", &a.out)?;
    run.seed(a.seed);
    let text = run.read(&a.space)?;
    let mut space: SearchSpace = parse_json(&text, &a.space)?;
    space.seed = a.seed;
    let dataset = load_dataset(&mut run, &a.input)?;
    let k = a.folds as usize;
    run.config(json!({ "space": space, "folds": k }));

    let result = grid_search(&dataset, &space, k)?;
    run.write("search.json", &pretty(&result))?;
    run.write("best_config.json", &pretty(&result.best))?;
    let mut table = result.report.render_table("best");
    table.push_str(&format!(
        "\n{} trials (primary task {}):\n",
        result.trials.len(),
        space.primary_task
    ));
    for t in &result.trials {
        let score = t.score.map_or("n/a".to_string(), |s| format!("{s:.4}"));
        table.push_str(&format!(
            "  #{:<5} params {:>8}  score {score}\n",
            t.index, t.parameter_count
        ));
    }
    run.write("search_table.txt", &table)?;
    print!("{table}");
    run.finish()
}

fn attribute(a: AttributeArgs) -> CliResult<()> {
    let mut run = Run::start("attribute", &a.out)?;
    let text = run.read(&a.model)?;
    let model = with_path(&a.model, ModelFile::from_json(&text))?;
    let dataset = load_dataset(&mut run, &a.input)?;
    let model_tasks: Vec<String> = model
        .task_names
        .clone()
        .unwrap_or_else(|| dataset.task_names().iter().map(|s| s.to_string()).collect());
    let task = model_tasks
        .iter()
        .position(|t| *t == a.task)
        .ok_or_else(|| {
            CliError::Usage(format!(
                "unknown task `{}`; valid tasks: {}",
                a.task,
                model_tasks.join(", ")
            ))
        })?;
    let rows: Vec<usize> = model_tasks
        .iter()
        .map(|t| task_index(&dataset, t))
        .collect::<CliResult<_>>()?;
    let dataset = dataset.select_tasks(&rows);
    if let Some(names) = &model.feature_names {
        if *names != dataset.feature_names {
            return Err(CliError::Usage(format!(
                "data features {:?} do not match the model's {:?}",
                dataset.feature_names, names
            )));
        }
    }
    let d = dataset.n_features();
    if a.top == 0 || a.top > d {
        return Err(CliError::Usage(format!(
            "--top must be between 1 and the number of features ({d}), got {}",
            a.top
        )));
    }
    let mode = match a.mode {
        Mode::InputGradient => AttributionMode::InputGradient,
        Mode::FirstLayerCam => AttributionMode::FirstLayerCam,
    };
    run.config(json!({
        "task": a.task,
        "class": a.class,
        "top": a.top,
        "mode": mode,
    }));

    let dataset = match &model.normalization_stats {
        Some(stats) => {
            let norm = Normalizer {
                stats: stats.clone(),
                zeroed: vec![false; stats.len()],
            };
            dataset.with_features(norm.apply(&dataset.features)?, stats.clone())
        }
        None => dataset,
    };
    let report = grad_cam_features_with(&model.state(), &dataset, task, a.class, mode).map_err(
        |e| match e {
            neomtl::Error::InvalidArgument(m) => CliError::Usage(m),
            e => CliError::Core(e),
        },
    )?;
    let text = render_top_k(&report, a.top)?;
    run.write("attribution.json", &report.to_json())?;
    run.write("attribution.txt", &text)?;
    print!("{text}");
    run.finish()
}

fn report(a: ReportArgs) -> CliResult<()> {
    let mut run = Run::start("report", &a.out)?;
    run.config(json!({ "command": "report" }));
    let dataset = load_dataset(&mut run, &a.input)?;
    let report = outcome_report(&dataset);
    let text = report.render_text();
    run.write("report.json", &report.to_json())?;
    run.write("report.txt", &text)?;
    print!("{text}");
    run.finish()
}
