//! CSV schema: one example per row, `id,label,f0,f1,...,f{d-1}`. A header
//! row is optional and recognised by a non-integer second field.
//!
//! Ground-truth side files use `id,subpop,mislabeled` with `mislabeled` in
//! `{0, 1}`.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use super::LabeledDataset;
use crate::error::{Error, Result};

const MAX_CLASSES: usize = 1 << 20;

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input)
}

/// Loads a dataset from `path`. With `n_classes = None` the label space is
/// `[0, max(label) + 1)`, at least two classes wide.
pub fn load_csv(path: impl AsRef<Path>, n_classes: Option<usize>) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_csv(file, &path.display().to_string(), n_classes)
}

/// Parses dataset CSV from any reader. `source` names the input in errors.
pub fn parse_csv<R: Read>(input: R, source: &str, n_classes: Option<usize>) -> Result<LabeledDataset> {
    let parse_err = |row: usize, message: String| Error::Parse {
        path: source.to_string(),
        row,
        message,
    };
    if n_classes.is_some_and(|c| c < 2) {
        return Err(Error::invalid("need at least 2 classes"));
    }

    let mut ids = Vec::new();
    let mut labels = Vec::new();
    let mut features = Vec::new();
    let mut dim = None;
    let mut first = true;

    for record in reader(input).records() {
        let record = record?;
        let row = record.position().map_or(ids.len() + 1, |p| p.line() as usize);
        if first {
            first = false;
            if record.get(1).is_some_and(|f| f.parse::<i64>().is_err()) {
                continue;
            }
        }
        if record.len() < 3 {
            return Err(parse_err(
                row,
                format!("expected id,label and at least one feature, got {} fields", record.len()),
            ));
        }
        let d = record.len() - 2;
        match dim {
            None => dim = Some(d),
            Some(expected) if expected != d => {
                return Err(parse_err(row, format!("ragged row: {d} features, expected {expected}")));
            }
            Some(_) => {}
        }
        let label: i64 = record[1]
            .parse()
            .map_err(|_| parse_err(row, format!("label {:?} is not an integer", &record[1])))?;
        let label = match n_classes {
            Some(c) if label < 0 || label >= c as i64 => {
                return Err(parse_err(row, format!("label {label} outside [0, {c})")));
            }
            _ if label < 0 || label > u32::MAX as i64 => {
                return Err(parse_err(row, format!("label {label} out of range")));
            }
            _ => label as u32,
        };
        for (k, field) in record.iter().skip(2).enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(row, format!("feature f{k} {field:?} is not numeric")))?;
            if !v.is_finite() {
                return Err(parse_err(row, format!("feature f{k} is not finite")));
            }
            features.push(v);
        }
        ids.push(record[0].to_string());
        labels.push(label);
    }

    let Some(dim) = dim else {
        return Err(Error::NoRows(source.to_string()));
    };
    let n_classes = n_classes.unwrap_or_else(|| {
        let max = labels.iter().copied().max().unwrap_or(0) as usize;
        (max + 1).max(2)
    });
    if n_classes > MAX_CLASSES {
        return Err(Error::invalid(format!("label space of {n_classes} classes exceeds {MAX_CLASSES}")));
    }
    LabeledDataset::from_flat(ids, features, dim, labels, n_classes).map_err(|e| match e {
        Error::InvalidArgument(m) => parse_err(0, m),
        other => other,
    })
}

/// Writes `dataset` with a header row. Floats use the shortest decimal form
/// that parses back to the same bits.
pub fn write_csv<W: Write>(dataset: &LabeledDataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["id".to_string(), "label".to_string()];
    header.extend((0..dataset.dim()).map(|k| format!("f{k}")));
    w.write_record(&header)?;
    let mut fields = Vec::with_capacity(dataset.dim() + 2);
    for i in 0..dataset.len() {
        fields.clear();
        fields.push(dataset.id(i).to_string());
        fields.push(dataset.label(i).to_string());
        fields.extend(dataset.features(i).iter().map(|v| v.to_string()));
        w.write_record(&fields)?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

pub fn save_csv(dataset: &LabeledDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(dataset, BufWriter::new(file))
}

/// Writes the `id,subpop,mislabeled` side file for `dataset`.
pub fn save_truth_csv(
    dataset: &LabeledDataset,
    subpop: &[usize],
    mislabeled: &[bool],
    path: impl AsRef<Path>,
) -> Result<()> {
    if subpop.len() != dataset.len() || mislabeled.len() != dataset.len() {
        return Err(Error::ShapeMismatch("ground truth length differs from dataset".into()));
    }
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record(["id", "subpop", "mislabeled"])?;
    for i in 0..dataset.len() {
        w.write_record([
            dataset.id(i),
            &subpop[i].to_string(),
            if mislabeled[i] { "1" } else { "0" },
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn load_truth_csv(path: impl AsRef<Path>) -> Result<(Vec<String>, Vec<usize>, Vec<bool>)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_truth_csv(file, &path.display().to_string())
}

/// Parses a ground-truth side file into `(ids, subpop, mislabeled)`.
pub fn parse_truth_csv<R: Read>(input: R, source: &str) -> Result<(Vec<String>, Vec<usize>, Vec<bool>)> {
    let parse_err = |row: usize, message: String| Error::Parse {
        path: source.to_string(),
        row,
        message,
    };
    let mut ids = Vec::new();
    let mut subpop = Vec::new();
    let mut mislabeled = Vec::new();
    let mut first = true;
    for record in reader(input).records() {
        let record = record?;
        let row = record.position().map_or(ids.len() + 1, |p| p.line() as usize);
        if std::mem::take(&mut first) && record.get(1).is_some_and(|f| f.parse::<u64>().is_err()) {
            continue;
        }
        if record.len() != 3 {
            return Err(parse_err(row, format!("expected 3 fields, got {}", record.len())));
        }
        let s: usize = record[1]
            .parse()
            .map_err(|_| parse_err(row, format!("subpop {:?} is not an index", &record[1])))?;
        let flag = match &record[2] {
            "0" => false,
            "1" => true,
            other => return Err(parse_err(row, format!("mislabeled flag {other:?} is not 0 or 1"))),
        };
        ids.push(record[0].to_string());
        subpop.push(s);
        mislabeled.push(flag);
    }
    if ids.is_empty() {
        return Err(Error::NoRows(source.to_string()));
    }
    Ok((ids, subpop, mislabeled))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<LabeledDataset> {
        parse_csv(s.as_bytes(), "<test>", None)
    }

    #[test]
    fn two_rows_without_header() {
        let ds = parse("a,0,1.0,2.0\nb,1,3.0,4.0").unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.dim(), 2);
        assert!(ds.n_classes() >= 2);
        assert_eq!(ds.features(1), &[3.0, 4.0]);
        assert_eq!(ds.id(0), "a");
    }

    #[test]
    fn header_detected() {
        let ds = parse("id,label,f0\nx,1,0.5\n").unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.label(0), 1);
    }

    #[test]
    fn empty_file() {
        let err = parse("").unwrap_err();
        assert!(err.to_string().contains("no rows"), "{err}");
        assert!(parse("id,label,f0\n").unwrap_err().to_string().contains("no rows"));
    }

    #[test]
    fn errors_name_the_row() {
        let err = parse("a,0,1.0\nb,1,2.0,3.0\n").unwrap_err();
        assert!(err.to_string().contains("row 2") && err.to_string().contains("ragged"), "{err}");
        let err = parse("a,0,1.0\nb,1,zz\n").unwrap_err();
        assert!(err.to_string().contains("row 2") && err.to_string().contains("not numeric"), "{err}");
        let err = parse_csv("a,0,1.0\nb,5,1.0\n".as_bytes(), "<t>", Some(3)).unwrap_err();
        assert!(err.to_string().contains("row 2") && err.to_string().contains("outside"), "{err}");
        let err = parse("a,-1,1.0\n").unwrap_err();
        assert!(err.to_string().contains("row 1"), "{err}");
        assert!(parse("a,0,nan\n").is_err());
        assert!(parse("a,0\n").is_err());
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ds = LabeledDataset::from_rows(
            vec!["p,q".into(), "r".into(), "s".into()],
            vec![vec![0.1 + 0.2, -0.0], vec![1e-300, f64::MAX], vec![std::f64::consts::PI, 5e-324]],
            vec![2, 0, 1],
            3,
        )
        .unwrap();
        let mut buf = Vec::new();
        write_csv(&ds, &mut buf).unwrap();
        let back = parse_csv(buf.as_slice(), "<buf>", Some(3)).unwrap();
        assert_eq!(back, ds);
        for i in 0..ds.len() {
            for (a, b) in back.features(i).iter().zip(ds.features(i)) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn truth_file_parsing() {
        let (ids, sp, ml) = parse_truth_csv("id,subpop,mislabeled\na,3,1\nb,0,0\n".as_bytes(), "<t>").unwrap();
        assert_eq!(ids, vec!["a", "b"]);
        assert_eq!(sp, vec![3, 0]);
        assert_eq!(ml, vec![true, false]);
        assert!(parse_truth_csv("a,3,2\n".as_bytes(), "<t>").is_err());
    }
}
