//! CSV input and output.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use proxbridge::Dataset;

/// Loaded data plus notes about ignored columns.
#[derive(Debug)]
pub struct LoadedDataset {
    pub data: Dataset,
    pub warnings: Vec<String>,
}

/// Reads `y,a,z,w[,x1,...,xd]` with a header row; `#` lines are comments.
/// Covariates are the `x<k>` columns ordered by `k`; other columns are ignored
/// with a warning.
pub fn load_dataset(path: &Path) -> Result<LoadedDataset> {
    let file =
        File::open(path).with_context(|| format!("cannot open data file {}", path.display()))?;
    read_dataset(file).with_context(|| format!("in data file {}", path.display()))
}

pub fn read_dataset<R: std::io::Read>(reader: R) -> Result<LoadedDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let find = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| anyhow!("missing required column `{name}`"))
    };
    let [iy, ia, iz, iw] = [find("y")?, find("a")?, find("z")?, find("w")?];
    let mut covariates: Vec<(usize, usize)> = vec![];
    let mut warnings = vec![];
    for (i, h) in headers.iter().enumerate() {
        if ["y", "a", "z", "w"].contains(&h.as_str()) {
            continue;
        }
        match h.strip_prefix('x').and_then(|k| k.parse::<usize>().ok()) {
            Some(k) if k >= 1 => covariates.push((k, i)),
            _ => warnings.push(format!("ignoring column `{h}`")),
        }
    }
    covariates.sort();
    if let Some(pair) = covariates.windows(2).find(|p| p[0].0 == p[1].0) {
        bail!("duplicate covariate column `x{}`", pair[0].0);
    }
    let (mut y, mut a, mut z, mut w) = (vec![], vec![], vec![], vec![]);
    let mut x = vec![vec![]; covariates.len()];
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let cell = |i: usize| -> Result<f64> {
            let raw = record.get(i).unwrap_or("");
            match raw.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(anyhow!(
                    "line {line}, column `{}`: `{raw}` is not a finite number",
                    headers[i]
                )),
            }
        };
        y.push(cell(iy)?);
        let av = cell(ia)?;
        if av != 0.0 && av != 1.0 {
            bail!("line {line}: treatment `a` must be 0 or 1, found {av}");
        }
        a.push(av as u8);
        z.push(cell(iz)?);
        w.push(cell(iw)?);
        for (col, &(_, i)) in x.iter_mut().zip(&covariates) {
            col.push(cell(i)?);
        }
    }
    let names = covariates
        .iter()
        .map(|&(_, i)| headers[i].clone())
        .collect();
    Ok(LoadedDataset {
        data: Dataset::with_names(y, a, z, w, x, names)?,
        warnings,
    })
}

/// Shortest representation that parses back to the same value.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

/// Writes `# key = value` comment lines, a header and the rows.
pub fn write_csv<'a>(
    path: &Path,
    comments: impl IntoIterator<Item = (&'a String, &'a String)>,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<()> {
    let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    let mut out = BufWriter::new(file);
    for (k, v) in comments {
        writeln!(out, "# {k} = {v}")?;
    }
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(header)?;
    for row in rows {
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_dataset<'a>(
    path: &Path,
    comments: impl IntoIterator<Item = (&'a String, &'a String)>,
    data: &Dataset,
) -> Result<()> {
    let mut header = vec!["y", "a", "z", "w"];
    header.extend(data.x_names.iter().map(String::as_str));
    let rows = (0..data.len()).map(|i| {
        let mut row = vec![
            fmt_f64(data.y[i]),
            data.a[i].to_string(),
            fmt_f64(data.z[i]),
            fmt_f64(data.w[i]),
        ];
        row.extend(data.x.iter().map(|c| fmt_f64(c[i])));
        row
    });
    write_csv(path, comments, &header, rows)
}
