use std::path::Path;

use crate::error::{Error, Result};

/// Numeric multivariate series with strictly increasing timestamps.
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesDataset {
    /// Row-major `T×D`.
    values: Vec<f64>,
    channels: usize,
    timestamps: Vec<i64>,
    labels: Option<Vec<u8>>,
    channel_names: Vec<String>,
}

impl SeriesDataset {
    pub fn new(
        values: Vec<f64>,
        channels: usize,
        timestamps: Vec<i64>,
        labels: Option<Vec<u8>>,
    ) -> Result<Self> {
        let names = (0..channels).map(|c| format!("v{c}")).collect();
        Self::with_names(values, channels, timestamps, labels, names)
    }

    pub fn with_names(
        values: Vec<f64>,
        channels: usize,
        timestamps: Vec<i64>,
        labels: Option<Vec<u8>>,
        channel_names: Vec<String>,
    ) -> Result<Self> {
        let t = timestamps.len();
        if t == 0 || channels == 0 {
            return Err(Error::Validation("series needs T ≥ 1 and D ≥ 1".into()));
        }
        if values.len() != t * channels || channel_names.len() != channels {
            return Err(Error::Validation(format!(
                "series shape mismatch: {} values for {t}×{channels}",
                values.len()
            )));
        }
        if let Some(i) = timestamps.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::Validation(format!(
                "timestamps not strictly increasing at index {}",
                i + 1
            )));
        }
        if let Some(l) = &labels {
            if l.len() != t || l.iter().any(|&v| v > 1) {
                return Err(Error::Validation("labels must be length T and in {0,1}".into()));
            }
        }
        Ok(SeriesDataset {
            values,
            channels,
            timestamps,
            labels,
            channel_names,
        })
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn timestamps(&self) -> &[i64] {
        &self.timestamps
    }

    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    /// Rows `start..start+len`, row-major.
    pub fn rows(&self, start: usize, len: usize) -> &[f64] {
        &self.values[start * self.channels..(start + len) * self.channels]
    }

    /// Contiguous sub-range as a new dataset.
    pub fn slice(&self, start: usize, end: usize) -> SeriesDataset {
        SeriesDataset {
            values: self.rows(start, end - start).to_vec(),
            channels: self.channels,
            timestamps: self.timestamps[start..end].to_vec(),
            labels: self.labels.as_ref().map(|l| l[start..end].to_vec()),
            channel_names: self.channel_names.clone(),
        }
    }

    /// Leading `fraction` of rows and the remainder.
    pub fn split(&self, fraction: f64) -> Result<(SeriesDataset, SeriesDataset)> {
        let cut = (fraction * self.len() as f64).floor() as usize;
        if cut == 0 || cut >= self.len() {
            return Err(Error::Config(format!(
                "train fraction {fraction} leaves an empty split of {} rows",
                self.len()
            )));
        }
        Ok((self.slice(0, cut), self.slice(cut, self.len())))
    }

    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> SeriesDataset {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v = f(*v));
        out
    }
}

/// Reads `timestamp,<value columns...>[,label]`.
///
/// Rows are sorted by timestamp (with a warning when the file was out of
/// order); duplicate timestamps are rejected.
pub fn load_series(path: &Path) -> Result<SeriesDataset> {
    let (ds, warnings) = load_series_with_warnings(path)?;
    for w in warnings {
        log::warn!("{w}");
    }
    Ok(ds)
}

pub fn load_series_with_warnings(path: &Path) -> Result<(SeriesDataset, Vec<String>)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_series(file, &path.display().to_string())
}

pub fn parse_series<R: std::io::Read>(reader: R, source: &str) -> Result<(SeriesDataset, Vec<String>)> {
    let parse_err = |row: usize, msg: String| Error::Parse {
        path: source.to_string(),
        row,
        msg,
    };
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let ts_col = headers
        .iter()
        .position(|h| h == "timestamp")
        .ok_or_else(|| parse_err(1, "missing `timestamp` column".into()))?;
    let label_col = headers.iter().position(|h| h == "label");
    let value_cols: Vec<usize> = (0..headers.len())
        .filter(|&i| i != ts_col && Some(i) != label_col)
        .collect();
    if value_cols.is_empty() {
        return Err(parse_err(1, "no value columns".into()));
    }
    let names: Vec<String> = value_cols.iter().map(|&i| headers[i].to_string()).collect();

    let mut rows: Vec<(i64, Vec<f64>, Option<u8>, usize)> = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let line = k + 2;
        let rec = rec?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let ts: i64 = field(ts_col)
            .parse()
            .map_err(|_| parse_err(line, format!("bad timestamp {:?}", field(ts_col))))?;
        let mut vals = Vec::with_capacity(value_cols.len());
        for &c in &value_cols {
            let v: f64 = field(c)
                .parse()
                .map_err(|_| parse_err(line, format!("non-numeric cell {:?} in `{}`", field(c), &headers[c])))?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("non-finite cell in `{}`", &headers[c])));
            }
            vals.push(v);
        }
        let label = match label_col {
            Some(c) => match field(c) {
                "0" => Some(0),
                "1" => Some(1),
                other => return Err(parse_err(line, format!("label {other:?} not in {{0,1}}"))),
            },
            None => None,
        };
        rows.push((ts, vals, label, line));
    }
    if rows.is_empty() {
        return Err(parse_err(2, "no data rows".into()));
    }
    let mut warnings = Vec::new();
    if rows.windows(2).any(|w| w[1].0 < w[0].0) {
        warnings.push(format!("{source}: rows were not in timestamp order; sorted"));
        rows.sort_by_key(|r| r.0);
    }
    if let Some(w) = rows.windows(2).find(|w| w[1].0 == w[0].0) {
        return Err(parse_err(w[1].3, format!("duplicate timestamp {}", w[1].0)));
    }
    let d = value_cols.len();
    let mut values = Vec::with_capacity(rows.len() * d);
    let mut timestamps = Vec::with_capacity(rows.len());
    let mut labels = label_col.map(|_| Vec::with_capacity(rows.len()));
    for (ts, vals, label, _) in rows {
        timestamps.push(ts);
        values.extend(vals);
        if let (Some(ls), Some(l)) = (labels.as_mut(), label) {
            ls.push(l);
        }
    }
    Ok((SeriesDataset::with_names(values, d, timestamps, labels, names)?, warnings))
}

pub fn write_series(ds: &SeriesDataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["timestamp".to_string()];
    header.extend(ds.channel_names().iter().cloned());
    if ds.labels().is_some() {
        header.push("label".into());
    }
    w.write_record(&header)?;
    for t in 0..ds.len() {
        let mut rec = vec![ds.timestamps()[t].to_string()];
        rec.extend(ds.rows(t, 1).iter().map(|v| v.to_string()));
        if let Some(l) = ds.labels() {
            rec.push(l[t].to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
