use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use super::{Dataset, Record};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::view::View;

pub const TENSOR_MAGIC: &[u8; 4] = b"S2SD";
/// File name used by [`save_dataset`].
pub const MANIFEST_NAME: &str = "manifest.csv";

const MAX_RANK: u32 = 8;

/// `"S2SD"`, u32 rank, u32 extents, f64 payload; all little-endian.
pub fn write_tensor<W: Write>(w: &mut W, t: &Tensor) -> std::io::Result<()> {
    w.write_all(TENSOR_MAGIC)?;
    w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
    for &e in t.shape() {
        w.write_all(&(e as u32).to_le_bytes())?;
    }
    for &v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_tensor<R: Read>(r: &mut R) -> Result<Tensor> {
    let corrupt = |what: &str| Error::Data(format!("tensor file: {what}"));
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| corrupt("truncated header"))?;
    if &magic != TENSOR_MAGIC {
        return Err(corrupt("bad magic, expected S2SD"));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)
        .map_err(|_| corrupt("truncated header"))?;
    let rank = u32::from_le_bytes(word);
    if rank == 0 || rank > MAX_RANK {
        return Err(corrupt(&format!("unsupported rank {rank}")));
    }
    let mut shape = Vec::with_capacity(rank as usize);
    for _ in 0..rank {
        r.read_exact(&mut word)
            .map_err(|_| corrupt("truncated header"))?;
        shape.push(u32::from_le_bytes(word) as usize);
    }
    let len: usize = shape.iter().product();
    let mut bytes = vec![0u8; len * 8];
    r.read_exact(&mut bytes)
        .map_err(|_| corrupt("truncated payload"))?;
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Tensor::new(shape, data)
}

fn read_tensor_file(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_tensor(&mut bytes.as_slice()).map_err(|e| match e {
        Error::Data(msg) => Error::Data(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Loads a manifest of `identity,view,relative-path` lines (paths relative to
/// the manifest's directory) or inline `identity,view,v0,v1,...` rows. Blank
/// lines and lines starting with `#` are skipped.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() < 3 {
            return Err(parse_err(format!(
                "expected at least 3 fields, found {}",
                fields.len()
            )));
        }
        let identity: u32 = fields[0]
            .parse()
            .map_err(|_| parse_err(format!("bad identity {:?}", fields[0])))?;
        let view: View = fields[1]
            .parse()
            .map_err(|_| parse_err(format!("bad view {:?}", fields[1])))?;
        let inline: std::result::Result<Vec<f64>, _> =
            fields[2..].iter().map(|f| f.parse::<f64>()).collect();
        let sample = match inline {
            Ok(values) => Tensor::from_vec(values),
            Err(_) if fields.len() == 3 => read_tensor_file(&base.join(fields[2]))?,
            Err(_) => {
                return Err(parse_err(
                    "inline feature values must all be numbers".into(),
                ))
            }
        };
        records.push(Record {
            identity,
            view,
            sample,
        });
    }
    Dataset::new(records)
}

/// Writes one `.s2sd` file per record under `dir/tensors` and a manifest at
/// `dir/manifest.csv`, returning the manifest path.
pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<PathBuf> {
    let tensors = dir.join("tensors");
    fs::create_dir_all(&tensors).map_err(|e| Error::io(&tensors, e))?;
    let mut manifest = String::from("# identity,view,path\n");
    let mut seen = std::collections::HashMap::new();
    for r in dataset.records() {
        let k = seen.entry((r.identity, r.view)).or_insert(0usize);
        let rel = format!("tensors/{}_{}_{}.s2sd", r.identity, r.view, k);
        *k += 1;
        let file = dir.join(&rel);
        let mut buf = Vec::new();
        write_tensor(&mut buf, &r.sample).expect("write to memory");
        fs::write(&file, buf).map_err(|e| Error::io(&file, e))?;
        manifest.push_str(&format!("{},{},{}\n", r.identity, r.view, rel));
    }
    let path = dir.join(MANIFEST_NAME);
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Writes the dataset as inline `identity,view,v0,v1,...` rows. Sample shape
/// is flattened, so only rank-1 datasets round-trip exactly.
pub fn save_dataset_inline(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut out = String::new();
    for r in dataset.records() {
        out.push_str(&format!("{},{}", r.identity, r.view));
        for v in r.sample.data() {
            out.push_str(&format!(",{v:?}"));
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_round_trip() {
        let t = Tensor::new(
            vec![2, 3],
            vec![1.0, -2.5, 3.0, f64::MIN_POSITIVE, 0.1, 7.0],
        )
        .unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        assert_eq!(&buf[..4], b"S2SD");
        assert_eq!(buf.len(), 4 + 4 + 8 + 6 * 8);
        assert_eq!(read_tensor(&mut buf.as_slice()).unwrap(), t);
    }

    #[test]
    fn corrupt_tensor_is_rejected() {
        let mut buf = Vec::new();
        write_tensor(&mut buf, &Tensor::from_vec(vec![1.0, 2.0])).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_tensor(&mut bad.as_slice()).is_err());
        buf.truncate(buf.len() - 3);
        assert!(read_tensor(&mut buf.as_slice()).is_err());
    }

    #[test]
    fn inline_fixture_loads() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tiny.csv");
        fs::write(
            &path,
            "# two identities\n1,A,0.0,1.0\n1,B,0.5,1.5\n1,B,0.4,1.4\n\n2,a,5,5\n2,b,6,6\n",
        )
        .unwrap();
        let d = load_dataset(&path).unwrap();
        assert_eq!(d.num_identities(), 2);
        assert_eq!(d.count(1, View::A), 1);
        assert_eq!(d.count(1, View::B), 2);
        assert_eq!(d.count(2, View::B), 1);
        assert_eq!(d.sample_shape(), &[2]);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        fs::write(&path, "1,A,0.0\n1,C,0.0\n").unwrap();
        match load_dataset(&path).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            e => panic!("unexpected {e}"),
        }
        fs::write(&path, "1,A,0.0\nx,B,0.0\n").unwrap();
        assert!(matches!(
            load_dataset(&path),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn missing_tensor_file_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        fs::write(&path, "1,A,nowhere/x.s2sd\n").unwrap();
        let err = load_dataset(&path).unwrap_err();
        assert!(err.to_string().contains("x.s2sd"), "{err}");
    }

    #[test]
    fn missing_view_is_a_data_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        fs::write(&path, "1,A,0\n1,B,0\n2,A,1\n").unwrap();
        assert!(matches!(load_dataset(&path), Err(Error::Data(_))));
    }
}
