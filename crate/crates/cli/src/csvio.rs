//! Strict reader for the tool's CSV artifacts.
//!
//! An artifact is a block of `# key: value` metadata lines, one header, and
//! rectangular data rows. Appending rows keeps a file parseable.

use std::collections::BTreeMap;

use boed_core::error::CoreError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StrictCsv {
    pub metadata: BTreeMap<String, String>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl StrictCsv {
    pub fn parse(text: &str) -> Result<Self, CoreError> {
        let mut metadata = BTreeMap::new();
        let mut header: Option<Vec<String>> = None;
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let lineno = i + 1;
            if let Some(rest) = line.strip_prefix("# ") {
                if header.is_some() {
                    return Err(CoreError::format(format!(
                        "line {lineno}: metadata after the header"
                    )));
                }
                let (key, value) = rest.split_once(": ").ok_or_else(|| {
                    CoreError::format(format!("line {lineno}: metadata is not '# key: value'"))
                })?;
                if metadata.insert(key.to_string(), value.to_string()).is_some() {
                    return Err(CoreError::format(format!(
                        "line {lineno}: duplicate metadata key '{key}'"
                    )));
                }
                continue;
            }
            let fields: Vec<String> = line.split(',').map(str::to_string).collect();
            match &header {
                None => {
                    if line.is_empty() {
                        return Err(CoreError::format(format!("line {lineno}: empty header")));
                    }
                    header = Some(fields);
                }
                Some(cols) => {
                    if fields.len() != cols.len() {
                        return Err(CoreError::format(format!(
                            "line {lineno}: {} fields, header has {}",
                            fields.len(),
                            cols.len()
                        )));
                    }
                    rows.push(fields);
                }
            }
        }
        let header = header.ok_or_else(|| CoreError::format("no header line"))?;
        Ok(StrictCsv {
            metadata,
            header,
            rows,
        })
    }

    pub fn to_string(&self) -> String {
        let mut out = String::new();
        for (key, value) in &self.metadata {
            out.push_str(&format!("# {key}: {value}\n"));
        }
        out.push_str(&self.header.join(","));
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn column(&self, name: &str) -> Result<Vec<&str>, CoreError> {
        let at = self
            .header
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| CoreError::format(format!("no column '{name}'")))?;
        Ok(self.rows.iter().map(|r| r[at].as_str()).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "# config_hash: abc123\nstep,value\n0,1.5\n64,2.25\n";

    #[test]
    fn parse_and_emit_round_trip_exactly() {
        let parsed = StrictCsv::parse(SAMPLE).unwrap();
        assert_eq!(parsed.metadata["config_hash"], "abc123");
        assert_eq!(parsed.header, ["step", "value"]);
        assert_eq!(parsed.rows.len(), 2);
        assert_eq!(parsed.to_string(), SAMPLE);
        assert_eq!(StrictCsv::parse(&parsed.to_string()).unwrap(), parsed);
    }

    #[test]
    fn appended_rows_stay_parseable() {
        let appended = format!("{SAMPLE}128,3.0\n");
        let parsed = StrictCsv::parse(&appended).unwrap();
        assert_eq!(parsed.rows.len(), 3);
        assert_eq!(parsed.column("value").unwrap(), ["1.5", "2.25", "3.0"]);
    }

    #[test]
    fn ragged_rows_and_stray_metadata_are_rejected_by_line() {
        let err = StrictCsv::parse("a,b\n1,2,3\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        let err = StrictCsv::parse("a,b\n# config_hash: x\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        let err = StrictCsv::parse("# malformed\na,b\n").unwrap_err();
        assert!(err.to_string().contains("line 1"), "{err}");
    }
}
