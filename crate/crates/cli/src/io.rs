use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use survchart::chart::Chart;
use survchart::dataset::{parse_dataset, Dataset, Schema};
use survchart::riskadjust::RiskModel;

/// A failed command, carrying its exit status.
#[derive(Debug)]
pub enum Failure {
    /// Bad input: exit status 2.
    Validation(String),
    /// A computation or write that did not succeed: exit status 1.
    Runtime(String),
}

impl Failure {
    pub fn usage(msg: impl Into<String>) -> Self {
        Failure::Validation(msg.into())
    }

    pub fn code(&self) -> i32 {
        match self {
            Failure::Validation(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Validation(m) | Failure::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<survchart::Error> for Failure {
    fn from(e: survchart::Error) -> Self {
        if e.is_validation() {
            Failure::Validation(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

pub type CliResult<T> = Result<T, Failure>;

fn open(path: &Path) -> CliResult<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Failure::Validation(format!("cannot read {}: {e}", path.display())))
}

pub fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| Failure::Validation(format!("cannot read {}: {e}", path.display())))
}

pub fn read_dataset(path: &Path, schema: &Schema) -> CliResult<Dataset> {
    parse_dataset(open(path)?, schema).map_err(|e| match e {
        e if e.is_validation() => Failure::Validation(format!("{}: {e}", path.display())),
        e => e.into(),
    })
}

pub fn read_model(path: &Path) -> CliResult<RiskModel> {
    RiskModel::from_json(&read_text(path)?).map_err(|e| Failure::Validation(format!("{}: {e}", path.display())))
}

fn is_json(path: &Path) -> bool {
    path.extension().is_some_and(|x| x.eq_ignore_ascii_case("json"))
}

/// Reads a chart from CSV, or from JSON when the extension says so.
pub fn read_chart(path: &Path) -> CliResult<Chart> {
    let res = if is_json(path) {
        Chart::from_json(&read_text(path)?)
    } else {
        Chart::from_csv(open(path)?)
    };
    res.map_err(|e| Failure::Validation(format!("{}: {e}", path.display())))
}

fn runtime(path: &Path, e: impl fmt::Display) -> Failure {
    Failure::Runtime(format!("cannot write {}: {e}", path.display()))
}

/// Writes through `f` to `path`, or to stdout when no path is given.
pub fn emit(path: Option<&PathBuf>, f: impl FnOnce(&mut dyn Write) -> survchart::Result<()>) -> CliResult<()> {
    match path {
        Some(p) => {
            let file = File::create(p).map_err(|e| runtime(p, e))?;
            let mut w = BufWriter::new(file);
            f(&mut w).map_err(|e| runtime(p, e))?;
            w.flush().map_err(|e| runtime(p, e))
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            f(&mut lock).map_err(|e| Failure::Runtime(e.to_string()))
        }
    }
}

pub fn emit_text(path: Option<&PathBuf>, text: &str) -> CliResult<()> {
    emit(path, |w| {
        w.write_all(text.as_bytes())?;
        if !text.ends_with('\n') {
            w.write_all(b"\n")?;
        }
        Ok(())
    })
}

/// Chart file: JSON when the extension is `.json`, CSV otherwise.
pub fn write_chart(path: Option<&PathBuf>, chart: &Chart) -> CliResult<()> {
    match path {
        Some(p) if is_json(p) => emit_text(Some(p), &chart.to_json()),
        _ => emit(path, |w| chart.to_csv(w)),
    }
}
