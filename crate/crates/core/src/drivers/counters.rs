use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CounterFormat {
    /// `perf stat -x,` output: `value,unit,event,...`, one event per line.
    #[default]
    PerfCsv,
    /// `name=value` lines written by a custom harness.
    KeyValueFile,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CounterParseError {
    #[error("counter `{0}` not found in counter output")]
    Missing(String),
    #[error("counter `{name}` has unusable value `{value}`")]
    BadValue { name: String, value: String },
}

pub fn parse_counter_output(text: &str, format: CounterFormat, metric_name: &str) -> Result<u64, CounterParseError> {
    let value = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .find_map(|line| match format {
            CounterFormat::PerfCsv => {
                let fields: Vec<&str> = line.split(',').collect();
                (fields.len() >= 3 && fields[2].trim() == metric_name).then(|| fields[0].trim())
            }
            CounterFormat::KeyValueFile => line
                .split_once('=')
                .filter(|(k, _)| k.trim() == metric_name)
                .map(|(_, v)| v.trim()),
        })
        .ok_or_else(|| CounterParseError::Missing(metric_name.to_string()))?;
    value.parse().map_err(|_| CounterParseError::BadValue {
        name: metric_name.to_string(),
        value: value.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const PERF: &str = "# started on Mon\n\n40000,,L1-dcache-load-misses,1002345,100.00,,\n123456,,instructions:u,1002345,100.00,0.5,insn per cycle\n";

    #[test]
    fn perf_csv_lookup() {
        assert_eq!(parse_counter_output(PERF, CounterFormat::PerfCsv, "L1-dcache-load-misses"), Ok(40000));
        assert_eq!(parse_counter_output(PERF, CounterFormat::PerfCsv, "instructions:u"), Ok(123456));
        assert_eq!(
            parse_counter_output(PERF, CounterFormat::PerfCsv, "L1-icache-load-misses"),
            Err(CounterParseError::Missing("L1-icache-load-misses".into()))
        );
    }

    #[test]
    fn not_counted_is_an_error() {
        let text = "<not counted>,,L1-dcache-load-misses,0,0.00,,";
        assert!(matches!(
            parse_counter_output(text, CounterFormat::PerfCsv, "L1-dcache-load-misses"),
            Err(CounterParseError::BadValue { .. })
        ));
    }

    #[test]
    fn key_value_lookup() {
        assert_eq!(parse_counter_output("l1d_misses=123\n", CounterFormat::KeyValueFile, "l1d_misses"), Ok(123));
        assert!(parse_counter_output("l1d_misses=x", CounterFormat::KeyValueFile, "l1d_misses").is_err());
        assert!(parse_counter_output("other=1", CounterFormat::KeyValueFile, "l1d_misses").is_err());
    }
}
