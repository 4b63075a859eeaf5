//! Output directories and file headers.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};

/// Creates `<root>/<command>-<unix seconds>`, adding a numeric suffix when
/// that name is taken. Existing directories are never reused.
pub fn fresh_dir(root: &Path, command: &str) -> Result<PathBuf> {
    fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
    let stamp = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs());
    for n in 0u32.. {
        let name = match n {
            0 => format!("{command}-{stamp}"),
            n => format!("{command}-{stamp}-{n}"),
        };
        let dir = root.join(name);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e).with_context(|| format!("creating {}", dir.display())),
        }
    }
    unreachable!()
}

/// Opens a new file (failing if it exists) and writes the `# spec` header.
pub fn create_with_header(path: &Path, spec_hash: &str) -> Result<BufWriter<File>> {
    let file = File::options()
        .write(true)
        .create_new(true)
        .open(path)
        .with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "# spec {spec_hash}")?;
    Ok(w)
}

/// Formats a float for CSV output; non-finite values become `nan`/`inf`.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else {
        v.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dirs_never_collide() {
        let root = tempfile::tempdir().unwrap();
        let a = fresh_dir(root.path(), "run").unwrap();
        let b = fresh_dir(root.path(), "run").unwrap();
        assert_ne!(a, b);
        assert!(a.is_dir() && b.is_dir());
    }

    #[test]
    fn header_files_refuse_to_clobber() {
        let root = tempfile::tempdir().unwrap();
        let p = root.path().join("x.csv");
        drop(create_with_header(&p, "abc").unwrap());
        assert_eq!(fs::read_to_string(&p).unwrap(), "# spec abc\n");
        assert!(create_with_header(&p, "abc").is_err());
    }
}
