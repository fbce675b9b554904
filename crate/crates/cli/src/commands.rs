use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::Path;

use lincde::boost::{fit, BoostModel};
use lincde::config::RunConfig;
use lincde::data::{read_csv, write_csv, Dataset};
use lincde::metrics::{evaluate as score, EvalOptions, NullModel};
use lincde::simdata::{generate, SimSpec};
use lincde::{Error, Result};

use crate::Output;

fn with_path(path: &Path, e: io::Error) -> Error {
    Error::Io(io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| with_path(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| with_path(path, e))?))
}

/// File when given, stdout otherwise.
fn sink(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(create(p)?),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn load_data(path: &Path, response: &str, require_response: bool) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| with_path(path, e))?;
    read_csv(BufReader::new(file), response, require_response).map_err(|e| match e {
        Error::Parse { line, column, message } => Error::Parse {
            line,
            column,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })
}

fn load_model(path: &Path) -> Result<BoostModel> {
    BoostModel::from_json(&read_text(path)?)
}

/// `data` with its feature columns in the order of `names`.
fn reorder(names: &[String], data: &Dataset, what: &str) -> Result<Dataset> {
    if data.d() != names.len() {
        return Err(Error::InvalidArgument(format!(
            "expected {} covariates, {what} has {}",
            names.len(),
            data.d()
        )));
    }
    let cols = names
        .iter()
        .map(|name| {
            data.feature_names
                .iter()
                .position(|f| f == name)
                .map(|j| data.cols[j].clone())
                .ok_or_else(|| Error::InvalidArgument(format!("{what} has no column '{name}'")))
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(names.to_vec(), cols, data.y.clone())
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::InvalidArgument(format!("{other:?}")),
    }
}

fn write_rows<W: Write>(w: W, header: &[String], rows: impl Iterator<Item = Vec<f64>>) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(row.iter().map(f64::to_string)).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn train(data: &Path, valid: Option<&Path>, model: &Path, diagnostics: &Path, cfg: &RunConfig) -> Result<()> {
    let boost = cfg.boost_config()?;
    let train = load_data(data, cfg.response(), true)?;
    let valid = valid
        .map(|p| load_data(p, cfg.response(), true).and_then(|v| reorder(&train.feature_names, &v, "validation data")))
        .transpose()?;
    let fitted = fit(&train, valid.as_ref(), &boost)?;
    log::info!(
        "fitted {} trees (selected iteration {})",
        fitted.trees.len(),
        fitted.selected_iteration
    );
    let mut out = create(model)?;
    out.write_all(fitted.to_json()?.as_bytes())?;
    out.flush()?;

    let header = ["iteration", "train_loglik", "validation_loglik"].map(String::from);
    let mut w = csv::Writer::from_writer(create(diagnostics)?);
    w.write_record(&header).map_err(csv_err)?;
    for r in &fitted.diagnostics {
        w.write_record([
            r.iteration.to_string(),
            r.train_loglik.to_string(),
            r.validation_loglik.map_or(String::new(), |v| v.to_string()),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn predict(model: &Path, data: &Path, kind: Output, output: Option<&Path>, cfg: &RunConfig) -> Result<()> {
    let model = load_model(model)?;
    let data = reorder(&model.feature_names, &load_data(data, cfg.response(), false)?, "data")?;
    let rows: Vec<Vec<f64>> = (0..data.n()).map(|i| data.row(i)).collect();
    let (header, values): (Vec<String>, Vec<Vec<f64>>) = match kind {
        Output::Density | Output::Cdf => {
            let grid = model.output_grid(cfg.grid_bins())?;
            let mids = grid.midpoints();
            let values = rows
                .iter()
                .map(|x| match kind {
                    Output::Density => model.predict_density(x, &grid),
                    _ => model.predict_cdf(x, &mids),
                })
                .collect::<Result<_>>()?;
            (mids.iter().map(f64::to_string).collect(), values)
        }
        Output::Quantile => {
            let levels = cfg.quantile_levels();
            let values = rows
                .iter()
                .map(|x| model.predict_quantiles(x, &levels))
                .collect::<Result<_>>()?;
            (levels.iter().map(|l| format!("q{l}")).collect(), values)
        }
    };
    write_rows(sink(output)?, &header, values.into_iter())
}

pub fn evaluate(
    model: &Path,
    data: &Path,
    train: Option<&Path>,
    oracle: Option<&Path>,
    output: Option<&Path>,
    cfg: &RunConfig,
) -> Result<()> {
    let model = load_model(model)?;
    let data = reorder(&model.feature_names, &load_data(data, cfg.response(), true)?, "data")?;
    let null = match train {
        Some(p) => Some(NullModel::fit(load_data(p, cfg.response(), true)?.response()?)?),
        None => None,
    };
    let oracle = oracle
        .map(|p| SimSpec::from_json(&read_text(p)?).map(|s| s.kind))
        .transpose()?;
    let opts = EvalOptions {
        quantile_levels: cfg.quantile_levels(),
        null,
        oracle,
        ..Default::default()
    };
    let report = score(&model, &data, &opts)?;
    let mut out = sink(output)?;
    writeln!(out, "{}", report.to_json()?)?;
    out.flush()?;
    Ok(())
}

pub fn simulate(spec: &str, output: &Path) -> Result<()> {
    let spec = SimSpec::from_json(spec)?;
    let data = generate(&spec)?;
    write_csv(create(output)?, &data, lincde::data::DEFAULT_RESPONSE)?;
    let mut side = create(&output.with_extension("spec.json"))?;
    writeln!(side, "{}", spec.to_json()?)?;
    side.flush()?;
    Ok(())
}

pub fn importance(model: &Path, output: Option<&Path>) -> Result<()> {
    let model = load_model(model)?;
    let mut w = csv::Writer::from_writer(sink(output)?);
    w.write_record(["feature", "importance"]).map_err(csv_err)?;
    for (name, score) in model.feature_names.iter().zip(model.importance()) {
        w.write_record([name.clone(), score.to_string()]).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}
