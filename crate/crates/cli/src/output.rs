//! Output files. Every CSV starts with a `# {json}` line echoing the effective
//! config; every JSON file carries it under `"config"`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use crate::Failure;

pub struct OutDir {
    dir: PathBuf,
    /// `{"command": ..., "seed": ..., "config": ...}`
    echo: Value,
}

impl OutDir {
    pub fn create(dir: &Path, command: &str, seed: u64, config: Value) -> Result<Self, Failure> {
        fs::create_dir_all(dir)
            .map_err(|e| Failure::Data(format!("cannot create output directory {}: {e}", dir.display())))?;
        Ok(OutDir { dir: dir.to_path_buf(), echo: json!({"command": command, "seed": seed, "config": config}) })
    }

    pub fn path(&self, name: impl AsRef<Path>) -> PathBuf {
        self.dir.join(name)
    }

    pub fn echo_line(&self) -> String {
        format!("# {}\n", self.echo)
    }

    pub fn write_csv(&self, name: &str, body: &str) -> Result<(), Failure> {
        let mut s = self.echo_line();
        s.push_str(body);
        self.write(name, &s)
    }

    /// Pretty JSON with the config echo merged in at the top level.
    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), Failure> {
        let mut v = serde_json::to_value(value).expect("report serializes");
        let obj = match &mut v {
            Value::Object(o) => o,
            _ => unreachable!("reports are JSON objects"),
        };
        for (k, val) in self.echo.as_object().expect("echo is an object") {
            obj.insert(k.clone(), val.clone());
        }
        let mut s = serde_json::to_string_pretty(&v).expect("report serializes");
        s.push('\n');
        self.write(name, &s)
    }

    pub fn write(&self, name: &str, body: &str) -> Result<(), Failure> {
        let p = self.path(name);
        fs::write(&p, body).map_err(|e| Failure::Data(format!("cannot write {}: {e}", p.display())))
    }
}

/// Six significant digits, plain notation when the magnitude allows.
pub fn sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    let exp = x.abs().log10().floor() as i32;
    if (-4..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        format!("{x:.decimals$}")
    } else {
        format!("{x:.5e}")
    }
}

/// Square matrix with class labels on both axes.
pub fn labeled_matrix_csv(labels: &[u32], value: impl Fn(usize, usize) -> f64) -> String {
    let mut s = String::from("class");
    for l in labels {
        s.push_str(&format!(",{l}"));
    }
    s.push('\n');
    for (i, l) in labels.iter().enumerate() {
        s.push_str(&l.to_string());
        for j in 0..labels.len() {
            s.push(',');
            s.push_str(&sig6(value(i, j)));
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_significant_digits() {
        assert_eq!(sig6(5.0), "5.00000");
        assert_eq!(sig6(0.1234567), "0.123457");
        assert_eq!(sig6(-12.3456789), "-12.3457");
        assert_eq!(sig6(1e-7), "1.00000e-7");
        assert_eq!(sig6(0.0), "0");
    }
}
