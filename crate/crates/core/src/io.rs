//! Tab-separated input and output.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2};

use crate::analysis::{FailureCode, GeneResult, ResultTable};
use crate::error::{Error, Result};
use crate::model::DesignMatrix;
use crate::perm::StopReason;
use crate::treatment::Treatment;

const NA: &str = "NA";

/// Gene × sample count table.
#[derive(Debug, Clone, PartialEq)]
pub struct CountMatrix {
    pub gene_ids: Vec<String>,
    pub sample_ids: Vec<String>,
    /// genes × samples
    pub counts: Array2<u64>,
}

impl CountMatrix {
    pub fn new(gene_ids: Vec<String>, sample_ids: Vec<String>, counts: Array2<u64>) -> Result<Self> {
        if counts.dim() != (gene_ids.len(), sample_ids.len()) {
            return Err(Error::Config(format!(
                "count matrix is {:?} but there are {} gene ids and {} sample ids",
                counts.dim(),
                gene_ids.len(),
                sample_ids.len()
            )));
        }
        Ok(Self {
            gene_ids,
            sample_ids,
            counts,
        })
    }

    /// Ids `gene_0, gene_1, ...` and `sample_0, ...`.
    pub fn from_array(counts: Array2<u64>) -> Self {
        let (m, n) = counts.dim();
        Self {
            gene_ids: (0..m).map(|g| format!("gene_{g}")).collect(),
            sample_ids: (0..n).map(|i| format!("sample_{i}")).collect(),
            counts,
        }
    }

    pub fn n_genes(&self) -> usize {
        self.counts.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.counts.ncols()
    }
}

fn parse_err(line: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        column,
        message: message.into(),
    }
}

fn io_err(e: std::io::Error) -> Error {
    Error::Io(e.to_string())
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

/// Non-empty lines with 1-based line numbers; a trailing `\r` is dropped.
fn lines<R: BufRead>(r: R) -> impl Iterator<Item = Result<(usize, String)>> {
    r.lines().enumerate().filter_map(|(i, l)| match l {
        Ok(l) => {
            let l = l.strip_suffix('\r').map(str::to_owned).unwrap_or(l);
            (!l.is_empty()).then_some(Ok((i + 1, l)))
        }
        Err(e) => Some(Err(io_err(e))),
    })
}

fn check_unique(ids: &[String], what: &str, line: usize) -> Result<()> {
    let mut seen = HashSet::new();
    for (j, id) in ids.iter().enumerate() {
        if !seen.insert(id) {
            return Err(parse_err(line, j + 2, format!("duplicate {what} '{id}'")));
        }
    }
    Ok(())
}

pub fn parse_counts<R: BufRead>(r: R) -> Result<CountMatrix> {
    let mut it = lines(r);
    let (hline, header) = it
        .next()
        .transpose()?
        .ok_or_else(|| parse_err(1, 1, "empty count file"))?;
    let sample_ids: Vec<String> = header.split('\t').skip(1).map(str::to_owned).collect();
    if sample_ids.is_empty() {
        return Err(parse_err(hline, 2, "header has no sample columns"));
    }
    check_unique(&sample_ids, "sample id", hline)?;
    let n = sample_ids.len();

    let mut gene_ids = Vec::new();
    let mut seen = HashSet::new();
    let mut data = Vec::new();
    for item in it {
        let (ln, line) = item?;
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != n + 1 {
            return Err(parse_err(
                ln,
                fields.len().min(n + 1) + 1,
                format!("expected {} fields, found {}", n + 1, fields.len()),
            ));
        }
        let id = fields[0].to_string();
        if !seen.insert(id.clone()) {
            return Err(parse_err(ln, 1, format!("duplicate gene id '{id}'")));
        }
        for (j, cell) in fields[1..].iter().enumerate() {
            let v = cell
                .trim()
                .parse::<u64>()
                .map_err(|_| parse_err(ln, j + 2, format!("'{cell}' is not a non-negative integer count")))?;
            data.push(v);
        }
        gene_ids.push(id);
    }
    if gene_ids.is_empty() {
        return Err(parse_err(hline + 1, 1, "count file has no gene rows"));
    }
    let counts = Array2::from_shape_vec((gene_ids.len(), n), data).expect("shape checked row by row");
    CountMatrix::new(gene_ids, sample_ids, counts)
}

pub fn load_counts(path: impl AsRef<Path>) -> Result<CountMatrix> {
    parse_counts(open(path.as_ref())?)
}

pub fn write_counts<W: Write>(mut w: W, counts: &CountMatrix) -> Result<()> {
    write!(w, "gene_id").map_err(io_err)?;
    for s in &counts.sample_ids {
        write!(w, "\t{s}").map_err(io_err)?;
    }
    writeln!(w).map_err(io_err)?;
    for (g, id) in counts.gene_ids.iter().enumerate() {
        write!(w, "{id}").map_err(io_err)?;
        for v in counts.counts.row(g) {
            write!(w, "\t{v}").map_err(io_err)?;
        }
        writeln!(w).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

pub fn save_counts(path: impl AsRef<Path>, counts: &CountMatrix) -> Result<()> {
    write_counts(create(path.as_ref())?, counts)
}

/// Column selection for [`parse_covariates`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CovariateSpec {
    pub treatment: String,
    /// `None` selects every column other than the treatment and size factors.
    pub covariates: Option<Vec<String>>,
    pub size_factor_column: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleData {
    pub x: Treatment,
    /// Intercept plus encoded covariates.
    pub design: DesignMatrix,
    /// Names of the design columns after the intercept.
    pub column_names: Vec<String>,
    pub size_factors: Option<Vec<f64>>,
}

/// Encode one covariate: numeric columns pass through, anything else is
/// one-hot encoded over sorted levels with the first level dropped.
fn encode_column(name: &str, values: &[&str]) -> Result<Vec<(String, Vec<f64>)>> {
    let numeric: Option<Vec<f64>> = values
        .iter()
        .map(|v| v.trim().parse::<f64>().ok().filter(|x| x.is_finite()))
        .collect();
    let cols = match numeric {
        Some(v) => vec![(name.to_string(), v)],
        None => {
            let levels: BTreeSet<&str> = values.iter().copied().collect();
            levels
                .iter()
                .skip(1)
                .map(|lvl| {
                    let col = values.iter().map(|v| if v == lvl { 1.0 } else { 0.0 }).collect();
                    (format!("{name}={lvl}"), col)
                })
                .collect()
        }
    };
    if cols.is_empty() || cols.iter().any(|(_, c)| c.iter().all(|&v| v == c[0])) {
        return Err(Error::Config(format!("covariate '{name}' is constant")));
    }
    Ok(cols)
}

fn encode_treatment(name: &str, values: &[&str]) -> Result<Treatment> {
    let numeric: Option<Vec<f64>> = values.iter().map(|v| v.trim().parse::<f64>().ok()).collect();
    let x = match numeric {
        Some(v) => {
            if v.iter().any(|&t| t != 0.0 && t != 1.0) {
                return Err(Error::Config(format!("treatment '{name}' must be 0/1")));
            }
            Treatment::from_f64(&v)?
        }
        None => {
            let levels: BTreeSet<&str> = values.iter().copied().collect();
            if levels.len() > 2 {
                return Err(Error::Config(format!(
                    "treatment '{name}' has {} levels, expected 2",
                    levels.len()
                )));
            }
            let first = *levels.iter().next().expect("at least one sample");
            let ones: Vec<bool> = values.iter().map(|&v| levels.len() == 2 && v != first).collect();
            Treatment::from_bools(&ones)
        }
    };
    if x.is_degenerate() {
        return Err(Error::DegenerateTreatment(format!(
            "treatment '{name}' has a single level"
        )));
    }
    Ok(x)
}

/// Read a sample table and align it to `sample_ids` by the first column.
pub fn parse_covariates<R: BufRead>(r: R, sample_ids: &[String], spec: &CovariateSpec) -> Result<SampleData> {
    let mut it = lines(r);
    let (_, header) = it
        .next()
        .transpose()?
        .ok_or_else(|| parse_err(1, 1, "empty covariate file"))?;
    let names: Vec<String> = header.split('\t').map(str::to_owned).collect();
    let col = |name: &str| -> Result<usize> {
        names
            .iter()
            .skip(1)
            .position(|c| c == name)
            .map(|j| j + 1)
            .ok_or_else(|| Error::Config(format!("column '{name}' not found")))
    };
    let tcol = col(&spec.treatment)?;
    let scol = spec.size_factor_column.as_deref().map(col).transpose()?;
    let ccols: Vec<usize> = match &spec.covariates {
        Some(c) => {
            if c.contains(&spec.treatment) {
                return Err(Error::Config("treatment column listed as a covariate".into()));
            }
            c.iter().map(|n| col(n)).collect::<Result<_>>()?
        }
        None => (1..names.len()).filter(|&j| j != tcol && Some(j) != scol).collect(),
    };

    let mut rows: HashMap<String, Vec<String>> = HashMap::new();
    for item in it {
        let (ln, line) = item?;
        let fields: Vec<String> = line.split('\t').map(str::to_owned).collect();
        if fields.len() != names.len() {
            return Err(parse_err(
                ln,
                fields.len().min(names.len()) + 1,
                format!("expected {} fields, found {}", names.len(), fields.len()),
            ));
        }
        let id = fields[0].clone();
        if rows.insert(id.clone(), fields).is_some() {
            return Err(Error::Config(format!(
                "sample '{id}' appears more than once (line {ln})"
            )));
        }
    }
    let aligned: Vec<&Vec<String>> = sample_ids
        .iter()
        .map(|s| {
            rows.get(s)
                .ok_or_else(|| Error::Config(format!("sample '{s}' missing from covariates")))
        })
        .collect::<Result<_>>()?;
    let column = |j: usize| -> Vec<&str> { aligned.iter().map(|r| r[j].as_str()).collect() };

    let x = encode_treatment(&spec.treatment, &column(tcol))?;
    let mut encoded = Vec::new();
    for &j in &ccols {
        encoded.extend(encode_column(&names[j], &column(j))?);
    }
    let n = sample_ids.len();
    let cov = Array2::from_shape_fn((n, encoded.len()), |(i, k)| encoded[k].1[i]);
    let design = DesignMatrix::with_intercept(cov.view(), None)?;
    let size_factors = scol
        .map(|j| {
            column(j)
                .iter()
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .ok()
                        .filter(|s| *s > 0.0 && s.is_finite())
                        .ok_or_else(|| Error::Config(format!("size factor '{v}' is not a positive number")))
                })
                .collect::<Result<Vec<f64>>>()
        })
        .transpose()?;
    Ok(SampleData {
        x,
        design,
        column_names: encoded.into_iter().map(|(n, _)| n).collect(),
        size_factors,
    })
}

pub fn load_covariates(path: impl AsRef<Path>, sample_ids: &[String], spec: &CovariateSpec) -> Result<SampleData> {
    parse_covariates(open(path.as_ref())?, sample_ids, spec)
}

/// Write `sample_id`, the treatment, and one column per covariate.
pub fn write_covariates<W: Write>(
    mut w: W,
    sample_ids: &[String],
    treatment_name: &str,
    x: &Treatment,
    covariate_names: &[String],
    covariates: ArrayView2<f64>,
    size_factors: Option<&Array1<f64>>,
) -> Result<()> {
    write!(w, "sample_id\t{treatment_name}").map_err(io_err)?;
    for c in covariate_names {
        write!(w, "\t{c}").map_err(io_err)?;
    }
    if size_factors.is_some() {
        write!(w, "\tsize_factor").map_err(io_err)?;
    }
    writeln!(w).map_err(io_err)?;
    let xb = x.to_bools();
    for (i, s) in sample_ids.iter().enumerate() {
        write!(w, "{s}\t{}", u8::from(xb[i])).map_err(io_err)?;
        for v in covariates.row(i) {
            write!(w, "\t{}", fmt_f64(*v)).map_err(io_err)?;
        }
        if let Some(sf) = size_factors {
            write!(w, "\t{}", fmt_f64(sf[i])).map_err(io_err)?;
        }
        writeln!(w).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_else(|| NA.to_string())
}

pub const RESULT_COLUMNS: [&str; 7] = [
    "gene_id",
    "z_orig",
    "p_value",
    "b_used",
    "stop_reason",
    "rejected",
    "failure",
];

/// Results as TSV; a leading comment carries the BH threshold.
pub fn write_results<W: Write>(mut w: W, table: &ResultTable) -> Result<()> {
    writeln!(w, "# bh_threshold\t{}", fmt_f64(table.threshold)).map_err(io_err)?;
    writeln!(w, "{}", RESULT_COLUMNS.join("\t")).map_err(io_err)?;
    for r in &table.rows {
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.gene_id,
            fmt_opt(r.z_orig),
            fmt_opt(r.p_value),
            r.b_used,
            r.stop_reason.map(|s| s.to_string()).unwrap_or_else(|| NA.into()),
            u8::from(r.rejected),
            r.failure.map(|f| f.to_string()).unwrap_or_else(|| NA.into()),
        )
        .map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

pub fn save_results(path: impl AsRef<Path>, table: &ResultTable) -> Result<()> {
    write_results(create(path.as_ref())?, table)
}

fn cell<T>(v: &str, ln: usize, col: usize, f: impl FnOnce(&str) -> Option<T>) -> Result<Option<T>> {
    if v == NA {
        return Ok(None);
    }
    f(v).map(Some)
        .ok_or_else(|| parse_err(ln, col, format!("invalid value '{v}'")))
}

pub fn read_results<R: BufRead>(r: R) -> Result<ResultTable> {
    let mut it = lines(r);
    let (ln, first) = it
        .next()
        .transpose()?
        .ok_or_else(|| parse_err(1, 1, "empty results file"))?;
    let threshold = first
        .strip_prefix("# bh_threshold\t")
        .and_then(|v| v.parse::<f64>().ok())
        .ok_or_else(|| parse_err(ln, 1, "missing bh_threshold line"))?;
    let (ln, header) = it
        .next()
        .transpose()?
        .ok_or_else(|| parse_err(ln + 1, 1, "missing header"))?;
    if header != RESULT_COLUMNS.join("\t") {
        return Err(parse_err(ln, 1, "unexpected header"));
    }
    let mut rows = Vec::new();
    for item in it {
        let (ln, line) = item?;
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != RESULT_COLUMNS.len() {
            return Err(parse_err(ln, f.len().min(7) + 1, "wrong number of fields"));
        }
        rows.push(GeneResult {
            gene_id: f[0].to_string(),
            z_orig: cell(f[1], ln, 2, |v| v.parse().ok())?,
            p_value: cell(f[2], ln, 3, |v| v.parse().ok())?,
            b_used: f[3].parse().map_err(|_| parse_err(ln, 4, "invalid b_used"))?,
            stop_reason: cell(f[4], ln, 5, |v| v.parse::<StopReason>().ok())?,
            rejected: match f[5] {
                "0" => false,
                "1" => true,
                _ => return Err(parse_err(ln, 6, "rejected must be 0 or 1")),
            },
            failure: cell(f[6], ln, 7, |v| v.parse::<FailureCode>().ok())?,
        });
    }
    Ok(ResultTable { rows, threshold })
}

pub fn load_results(path: impl AsRef<Path>) -> Result<ResultTable> {
    read_results(open(path.as_ref())?)
}

/// Ground truth for simulated genes.
pub fn write_truth<W: Write>(mut w: W, gene_ids: &[String], is_null: &[bool], gamma: &[f64]) -> Result<()> {
    writeln!(w, "gene_id\tis_null\tgamma").map_err(io_err)?;
    for ((id, &null), &g) in gene_ids.iter().zip(is_null).zip(gamma) {
        writeln!(w, "{id}\t{}\t{}", u8::from(null), fmt_f64(g)).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn samples(ids: &[&str]) -> Vec<String> {
        ids.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn counts_well_formed() {
        let m = parse_counts("gene\ta\tb\tc\ng1\t1\t2\t3\ng2\t0\t5\t7\n".as_bytes()).unwrap();
        assert_eq!(m.gene_ids, ["g1", "g2"]);
        assert_eq!(m.sample_ids, ["a", "b", "c"]);
        assert_eq!(m.counts[[1, 2]], 7);
    }

    #[test]
    fn counts_errors_carry_position() {
        let e = parse_counts("gene\ta\tb\ng1\t1\t3.5\n".as_bytes()).unwrap_err();
        assert!(matches!(e, Error::Parse { line: 2, column: 3, .. }), "{e:?}");
        assert!(matches!(parse_counts("".as_bytes()), Err(Error::Parse { .. })));
        let e = parse_counts("gene\ta\tb\ng1\t1\t3\ng1\t2\t2\n".as_bytes()).unwrap_err();
        assert!(matches!(e, Error::Parse { line: 3, column: 1, .. }));
        let e = parse_counts("gene\ta\tb\ng1\t1\n".as_bytes()).unwrap_err();
        assert!(matches!(e, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn covariates_join_and_encode() {
        let text = "id\tdonor\ttrt\tage\nc\td2\tctl\t3\na\td1\tko\t1\ne\td2\tko\t0\nb\td3\tctl\t2\nd\td1\tko\t5\n";
        let spec = CovariateSpec {
            treatment: "trt".into(),
            ..Default::default()
        };
        let s = parse_covariates(text.as_bytes(), &samples(&["a", "b", "c", "d", "e"]), &spec).unwrap();
        assert_eq!(s.x.to_bools(), [true, false, false, true, true]);
        assert_eq!(s.column_names, ["donor=d2", "donor=d3", "age"]);
        assert_eq!(s.design.p(), 4);
        let z = s.design.matrix();
        assert_eq!(z.row(2).to_vec(), [1.0, 1.0, 0.0, 3.0]);
    }

    #[test]
    fn covariate_errors() {
        let spec = CovariateSpec {
            treatment: "trt".into(),
            ..Default::default()
        };
        let ids = samples(&["a", "b"]);
        let e = parse_covariates("id\ttrt\na\t1\nb\t1\n".as_bytes(), &ids, &spec).unwrap_err();
        assert!(matches!(e, Error::DegenerateTreatment(_)));
        let e = parse_covariates("id\ttrt\na\t1\n".as_bytes(), &ids, &spec).unwrap_err();
        assert!(matches!(e, Error::Config(_)));
        let e = parse_covariates("id\ttrt\tk\na\t1\t2\nb\t0\t2\n".as_bytes(), &ids, &spec).unwrap_err();
        assert!(matches!(e, Error::Config(_)));
        let e = parse_covariates("id\ttrt\na\t2\nb\t0\n".as_bytes(), &ids, &spec).unwrap_err();
        assert!(matches!(e, Error::Config(_)));
    }

    #[test]
    fn results_round_trip() {
        let table = ResultTable {
            rows: vec![
                GeneResult {
                    gene_id: "g1".into(),
                    z_orig: Some(-1.0 / 3.0),
                    p_value: Some(0.1 + 0.2),
                    b_used: 17,
                    stop_reason: Some(StopReason::Futility),
                    rejected: false,
                    failure: None,
                },
                GeneResult {
                    gene_id: "g2".into(),
                    z_orig: None,
                    p_value: None,
                    b_used: 0,
                    stop_reason: None,
                    rejected: false,
                    failure: Some(FailureCode::Collinear),
                },
            ],
            threshold: 0.0123456789,
        };
        let mut buf = Vec::new();
        write_results(&mut buf, &table).unwrap();
        assert_eq!(read_results(buf.as_slice()).unwrap(), table);
    }
}
