//! Plain CSV files: genotypes (header of SNP ids, one row per individual,
//! entries 0/1/2), a one-column phenotype and a covariate matrix, each with
//! a header row.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use herit_core::data::GenotypeMatrix;
use herit_core::matrix::ColMatrix;

use crate::error::{CliError, CliResult};

fn reader(path: &Path) -> CliResult<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    Ok(csv::ReaderBuilder::new().flexible(true).from_reader(file))
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => CliError::io(path, io),
        other => CliError::parse(path, format!("{other:?}")),
    }
}

fn header(path: &Path, rdr: &mut csv::Reader<File>) -> CliResult<Vec<String>> {
    let h = rdr.headers().map_err(|e| csv_error(path, e))?;
    if h.is_empty() || (h.len() == 1 && h[0].trim().is_empty()) {
        return Err(CliError::parse(path, "missing header row"));
    }
    Ok(h.iter().map(|s| s.trim().to_string()).collect())
}

fn line_of(rec: &csv::ByteRecord) -> u64 {
    rec.position().map_or(0, |p| p.line())
}

fn check_width(path: &Path, rec: &csv::ByteRecord, width: usize) -> CliResult<()> {
    if rec.len() != width {
        return Err(CliError::parse(
            path,
            format!("line {}: expected {width} fields, found {}", line_of(rec), rec.len()),
        ));
    }
    Ok(())
}

/// SNP ids and the genotype matrix.
pub fn read_genotypes(path: &Path) -> CliResult<(Vec<String>, GenotypeMatrix)> {
    let mut rdr = reader(path)?;
    let ids = header(path, &mut rdr)?;
    let p = ids.len();
    let mut rows: Vec<u8> = Vec::new();
    let mut n = 0;
    let mut rec = csv::ByteRecord::new();
    while rdr.read_byte_record(&mut rec).map_err(|e| csv_error(path, e))? {
        check_width(path, &rec, p)?;
        for (j, field) in rec.iter().enumerate() {
            let v = match field.trim_ascii() {
                b"0" => 0,
                b"1" => 1,
                b"2" => 2,
                other => {
                    return Err(CliError::parse(
                        path,
                        format!(
                            "line {}, column {} (SNP {}): genotype must be 0, 1 or 2, found {:?}",
                            line_of(&rec),
                            j + 1,
                            ids[j],
                            String::from_utf8_lossy(other)
                        ),
                    ))
                }
            };
            rows.push(v);
        }
        n += 1;
    }
    let mut values = vec![0u8; n * p];
    for (i, row) in rows.chunks_exact(p.max(1)).enumerate() {
        for (j, &v) in row.iter().enumerate() {
            values[j * n + i] = v;
        }
    }
    let w = GenotypeMatrix::new(n, p, values).map_err(|e| CliError::parse(path, e.to_string()))?;
    Ok((ids, w))
}

/// Header and columns of a numeric CSV file.
pub fn read_matrix(path: &Path) -> CliResult<(Vec<String>, ColMatrix)> {
    let mut rdr = reader(path)?;
    let names = header(path, &mut rdr)?;
    let p = names.len();
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); p];
    let mut rec = csv::ByteRecord::new();
    while rdr.read_byte_record(&mut rec).map_err(|e| csv_error(path, e))? {
        check_width(path, &rec, p)?;
        for (j, field) in rec.iter().enumerate() {
            let text = String::from_utf8_lossy(field);
            let v: f64 = text.trim().parse().ok().filter(|v: &f64| v.is_finite()).ok_or_else(|| {
                CliError::parse(
                    path,
                    format!(
                        "line {}, column {} ({}): expected a finite number, found {:?}",
                        line_of(&rec),
                        j + 1,
                        names[j],
                        text
                    ),
                )
            })?;
            cols[j].push(v);
        }
    }
    let n = cols.first().map_or(0, Vec::len);
    if n == 0 {
        return Err(CliError::parse(path, "no data rows"));
    }
    let m = ColMatrix::from_columns(n, &cols).map_err(|e| CliError::parse(path, e.to_string()))?;
    Ok((names, m))
}

pub fn read_vector(path: &Path) -> CliResult<(String, Vec<f64>)> {
    let (names, m) = read_matrix(path)?;
    if names.len() != 1 {
        return Err(CliError::parse(path, format!("expected a single column, found {}", names.len())));
    }
    Ok((names.into_iter().next().unwrap_or_default(), m.col(0).to_vec()))
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

fn header_line<S: AsRef<str>>(names: &[S]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    // writing to memory does not fail
    w.write_record(names.iter().map(AsRef::as_ref)).expect("in-memory write");
    w.into_inner().expect("in-memory write")
}

pub fn write_genotypes(path: &Path, ids: &[String], w: &GenotypeMatrix) -> CliResult<()> {
    let mut out = create(path)?;
    let io = |e| CliError::io(path, e);
    out.write_all(&header_line(ids)).map_err(io)?;
    let mut line = Vec::with_capacity(2 * w.n_snps());
    for i in 0..w.n() {
        line.clear();
        for j in 0..w.n_snps() {
            if j > 0 {
                line.push(b',');
            }
            line.push(b'0' + w.get(i, j));
        }
        line.push(b'\n');
        out.write_all(&line).map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn write_matrix<S: AsRef<str>>(path: &Path, names: &[S], m: &ColMatrix) -> CliResult<()> {
    let mut out = create(path)?;
    let io = |e| CliError::io(path, e);
    out.write_all(&header_line(names)).map_err(io)?;
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| m.get(i, j).to_string()).collect();
        writeln!(out, "{}", row.join(",")).map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn write_vector(path: &Path, name: &str, v: &[f64]) -> CliResult<()> {
    let m = ColMatrix::from_columns(v.len(), &[v]).map_err(|e| CliError::Usage(e.to_string()))?;
    write_matrix(path, &[name], &m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn genotypes_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let w = GenotypeMatrix::new(3, 2, vec![0, 1, 2, 2, 2, 0]).unwrap();
        let ids = vec!["a".to_string(), "b,c".to_string()];
        let p = dir.path().join("g.csv");
        write_genotypes(&p, &ids, &w).unwrap();
        let (ids2, w2) = read_genotypes(&p).unwrap();
        assert_eq!(ids, ids2);
        assert_eq!(w, w2);
    }

    #[test]
    fn bad_genotype_names_the_cell() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "g.csv", "s1,s2\n0,1\n2,3\n");
        let msg = read_genotypes(&p).unwrap_err().to_string();
        assert!(msg.contains("g.csv"), "{msg}");
        assert!(msg.contains("line 3, column 2 (SNP s2)"), "{msg}");
        let p = write(dir.path(), "h.csv", "s1,s2\n0,1\n2\n");
        let msg = read_genotypes(&p).unwrap_err().to_string();
        assert!(msg.contains("line 3") && msg.contains("expected 2 fields"), "{msg}");
    }

    #[test]
    fn numeric_files() {
        let dir = tempfile::tempdir().unwrap();
        let v = [0.1, -2.5e-17, 3.0, 1.0 / 3.0];
        let p = dir.path().join("y.csv");
        write_vector(&p, "y", &v).unwrap();
        let (name, back) = read_vector(&p).unwrap();
        assert_eq!(name, "y");
        assert_eq!(back, v);
        let p = write(dir.path(), "x.csv", "a,b\n1,2\n3,x\n");
        let msg = read_matrix(&p).unwrap_err().to_string();
        assert!(msg.contains("line 3, column 2 (b)"), "{msg}");
        assert!(read_vector(&write(dir.path(), "z.csv", "a,b\n1,2\n")).is_err());
    }

    #[test]
    fn missing_file_names_the_path() {
        let err = read_vector(Path::new("/nonexistent/pheno.csv")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/pheno.csv"));
        assert_eq!(err.exit_code(), 2);
    }
}
