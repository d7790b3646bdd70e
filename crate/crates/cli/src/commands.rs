use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use mixfact::estimation::{quantification_baseline, DimSelection};
use mixfact::{
    fit, fit_gg, select_dim, ColumnKind, FitOptions, FitReport, FittedModel, MixedDataset, Schema, Termination,
};
use serde_json::Value;

use crate::biplot::{biplot_csv, biplot_svg, BiplotData};
use crate::{
    BiplotArgs, Command, CorrArgs, DataArgs, EvalArgs, FitArgs, FitGgArgs, OptimArgs, SampleArgs, SelectDimArgs,
};

pub(crate) fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Fit(a) => cmd_fit(a),
        Command::FitGg(a) => cmd_fit_gg(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Sample(a) => cmd_sample(a),
        Command::SelectDim(a) => cmd_select_dim(a),
        Command::Biplot(a) => cmd_biplot(a),
        Command::Corr(a) => cmd_corr(a),
    }
}

fn options(o: &OptimArgs) -> FitOptions {
    FitOptions {
        restarts: o.restarts,
        max_iter: o.max_iter,
        tol: o.tol,
        ftol: o.ftol,
        ..FitOptions::new(o.seed)
    }
}

fn load_schema(path: &Path) -> Result<Schema> {
    Schema::from_file(path).with_context(|| format!("reading schema {}", path.display()))
}

fn load_data(path: &Path, schema: &Schema, standardize: bool) -> Result<MixedDataset> {
    let data = MixedDataset::load_csv(path, schema).with_context(|| format!("reading data {}", path.display()))?;
    if standardize {
        Ok(data.standardize()?.0)
    } else {
        Ok(data)
    }
}

fn load_dataset(a: &DataArgs) -> Result<MixedDataset> {
    load_data(&a.data, &load_schema(&a.schema)?, a.standardize)
}

/// Data for an existing model: with a schema file, or with the file's
/// columns taken in order (continuous first).
fn load_for_model(path: &Path, schema: Option<&Path>, p_x: usize, q: usize, standardize: bool) -> Result<MixedDataset> {
    let schema = match schema {
        Some(s) => load_schema(s)?,
        None => {
            let mut rdr = csv::Reader::from_path(path).with_context(|| format!("reading data {}", path.display()))?;
            let names: Vec<String> = rdr
                .headers()?
                .iter()
                .filter(|h| *h != mixfact::data::COUNT_COLUMN)
                .map(str::to_string)
                .collect();
            Schema::positional(&names, p_x, q)?
        }
    };
    if schema.p_x() != p_x || schema.q() != q {
        bail!(
            "schema has {} continuous and {} binary columns, model expects {} and {}",
            schema.p_x(),
            schema.q(),
            p_x,
            q
        );
    }
    load_data(path, &schema, standardize)
}

fn load_model(path: &Path) -> Result<FittedModel> {
    let text = fs::read_to_string(path).with_context(|| format!("reading model {}", path.display()))?;
    let v: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let m = if let Some(inner) = v.get("model") {
        serde_json::from_value(inner.clone())?
    } else if v.get("family").is_some() {
        serde_json::from_value(v)?
    } else if v.get("w_tilde").is_some() {
        FittedModel::Factor(serde_json::from_value(v)?)
    } else if v.get("lambda").is_some() {
        FittedModel::Gg(serde_json::from_value(v)?)
    } else {
        bail!("{} is neither a factor model, GG parameters nor a fit report", path.display());
    };
    Ok(m)
}

fn model_dims(m: &FittedModel) -> (usize, usize) {
    match m {
        FittedModel::Factor(f) => (f.p_x(), f.q()),
        FittedModel::Gg(g) => (g.p(), g.q()),
    }
}

fn model_json(m: &FittedModel) -> Result<String> {
    Ok(match m {
        FittedModel::Factor(f) => f.to_json()?,
        FittedModel::Gg(g) => g.to_json()?,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => write_text(p, text),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn check_report(r: &FitReport) -> Result<()> {
    if r.termination == Termination::Diverged {
        bail!(
            "fit diverged: no restart reached a finite likelihood (best restart {}, {} iterations)",
            r.best_restart,
            r.iterations
        );
    }
    if !r.converged {
        eprintln!(
            "warning: stopped without convergence ({:?}, gradient sup-norm {:e})",
            r.termination, r.grad_sup_norm
        );
    }
    Ok(())
}

fn summary(r: &FitReport) -> String {
    format!(
        "nll {:?}\nbic {:?}\nparameters {}\nconverged {}\n",
        r.nll, r.bic, r.n_params, r.converged
    )
}

fn cmd_fit(a: FitArgs) -> Result<()> {
    let data = load_dataset(&a.data)?;
    let opts = options(&a.optim);
    let report = if a.quantify {
        quantification_baseline(&data, a.dim, &opts)?
    } else {
        fit(&data, a.dim, &opts)?
    };
    check_report(&report)?;
    write_text(&a.out, &model_json(&report.model)?)?;
    if let Some(p) = &a.report {
        write_text(p, &report.to_json()?)?;
    }
    print!("{}", summary(&report));
    Ok(())
}

fn cmd_fit_gg(a: FitGgArgs) -> Result<()> {
    let data = load_dataset(&a.data)?;
    let opts = FitOptions {
        fix_g_zero: a.fix_g_zero,
        ..options(&a.optim)
    };
    let report = fit_gg(&data, &opts)?;
    check_report(&report)?;
    write_text(&a.out, &model_json(&report.model)?)?;
    if let Some(p) = &a.report {
        write_text(p, &report.to_json()?)?;
    }
    print!("{}", summary(&report));
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let (p_x, q) = model_dims(&model);
    let data = load_for_model(&a.data, a.schema.as_deref(), p_x, q, false)?;
    let mut out = String::from("row,log_density\n");
    for i in 0..data.n_rows() {
        let (x, y) = (data.x_row(i), data.y_row(i));
        let lp = match &model {
            FittedModel::Factor(f) => f.observed_logpdf_missing(x, y),
            FittedModel::Gg(g) => g.observed_logpdf_missing(x, y),
        }
        .with_context(|| format!("row {}", i + 1))?;
        out.push_str(&format!("{i},{lp:?}\n"));
    }
    emit(a.out.as_deref(), &out)
}

fn cmd_sample(a: SampleArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let draws = match &model {
        FittedModel::Factor(f) => f.sample(a.n, a.seed)?,
        FittedModel::Gg(g) => g.sample(a.n, a.seed)?,
    };
    let (p_x, q) = model_dims(&model);
    let schema = match &a.schema {
        Some(p) => load_schema(p)?,
        None => Schema::default_names(p_x, q),
    };
    if schema.p_x() != p_x || schema.q() != q {
        bail!("schema does not match the model dimensions ({p_x} continuous, {q} binary)");
    }
    let x = draws.iter().map(|(x, _)| x.iter().map(|v| Some(*v)).collect()).collect();
    let y = draws.iter().map(|(_, y)| y.to_bools().into_iter().map(Some).collect()).collect();
    let data = MixedDataset::from_rows(schema, x, y)?;
    let mut buf = Vec::new();
    data.write_csv(&mut buf)?;
    emit(a.out.as_deref(), std::str::from_utf8(&buf)?)
}

fn bic_table(sel: &DimSelection) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["p_z", "nll", "n_params", "bic", "converged", "termination", "excluded", "selected"])?;
    for c in &sel.table {
        w.write_record([
            c.p_z.to_string(),
            format!("{:?}", c.nll),
            c.n_params.to_string(),
            format!("{:?}", c.bic),
            c.converged.to_string(),
            serde_json::to_value(c.termination)?.as_str().unwrap_or_default().to_string(),
            c.excluded.to_string(),
            (c.p_z == sel.best).to_string(),
        ])?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

fn cmd_select_dim(a: SelectDimArgs) -> Result<()> {
    let data = load_dataset(&a.data)?;
    let sel = select_dim(&data, &a.dims.0, &options(&a.optim))?;
    for c in sel.table.iter().filter(|c| c.excluded) {
        eprintln!("warning: p_z = {} diverged and was excluded", c.p_z);
    }
    emit(a.out.as_deref(), &bic_table(&sel)?)?;
    if let Some(p) = &a.model_out {
        write_text(p, &model_json(&sel.best_report().model)?)?;
    }
    if a.out.is_some() {
        println!("selected p_z {}", sel.best);
    }
    Ok(())
}

fn cmd_biplot(a: BiplotArgs) -> Result<()> {
    let FittedModel::Factor(model) = load_model(&a.model)? else {
        bail!("biplot needs a factor model");
    };
    if a.out_csv.is_none() && a.out_svg.is_none() {
        bail!("nothing to write: give --out-csv and/or --out-svg");
    }
    let data = load_for_model(&a.data, a.schema.as_deref(), model.p_x(), model.q(), a.standardize)?;
    let d = BiplotData::build(&model, &data, a.axes, a.color_by.as_deref())?;
    if let Some(p) = &a.out_csv {
        write_text(p, &biplot_csv(&d)?)?;
    }
    if let Some(p) = &a.out_svg {
        write_text(p, &biplot_svg(&d))?;
    }
    Ok(())
}

fn cmd_corr(a: CorrArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let (p_x, q) = model_dims(&model);
    let data = load_for_model(&a.data, a.schema.as_deref(), p_x, q, a.standardize)?;
    let empirical = data.pearson_correlations()?;
    let implied = match &model {
        FittedModel::Factor(f) => f.pearson_correlations()?,
        FittedModel::Gg(g) => g.pearson_correlations()?,
    };
    let schema = data.schema();
    let names: Vec<&str> = schema
        .names_of(ColumnKind::Continuous)
        .into_iter()
        .chain(schema.names_of(ColumnKind::Binary))
        .collect();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["variable".to_string()];
    header.extend(names.iter().map(|n| format!("empirical:{n}")));
    header.extend(names.iter().map(|n| format!("model:{n}")));
    w.write_record(&header)?;
    for (i, n) in names.iter().enumerate() {
        let mut rec = vec![n.to_string()];
        rec.extend((0..names.len()).map(|j| format!("{:?}", empirical[(i, j)])));
        rec.extend((0..names.len()).map(|j| format!("{:?}", implied[(i, j)])));
        w.write_record(&rec)?;
    }
    emit(a.out.as_deref(), &String::from_utf8(w.into_inner()?)?)
}
