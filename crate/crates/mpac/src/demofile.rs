//! Line-oriented demonstration files.
//!
//! ```text
//! #mpac-demos  v1  env=pendulum-disc9  generator=scripted-swingup  obs_dim=3  pairs=10000  mean_return=-185.4
//! 0,0,-0.93,0.36,0.52,8
//! 0,1,...
//! ```
//!
//! Header fields are tab-separated. Each record is
//! `episode,step,obs...,action`. Reals use the shortest decimal that parses
//! back to the same `f64`, so loading reproduces the saved set exactly.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use mpac_core::demos::{DemoPair, DemonstrationSet};
use mpac_core::envs::EnvId;

pub const MAGIC: &str = "#mpac-demos";
pub const VERSION: &str = "v1";

#[derive(Debug, thiserror::Error)]
pub enum DemoFileError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Invalid(#[from] mpac_core::Error),
    #[error("demonstrations are for {found}, expected {expected}")]
    EnvMismatch { expected: EnvId, found: EnvId },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn parse_err(line: usize, message: impl Into<String>) -> DemoFileError {
    DemoFileError::Parse { line, message: message.into() }
}

/// Render `set` in the file format.
pub fn to_text(set: &DemonstrationSet) -> Result<String, DemoFileError> {
    if set.is_empty() {
        return Err(mpac_core::Error::InvalidArgument("cannot save an empty demonstration set".into()).into());
    }
    let mut out = String::new();
    let obs_dim = set.env().observation_dim();
    write!(
        out,
        "{MAGIC}\t{VERSION}\tenv={}\tgenerator={}\tobs_dim={obs_dim}\tpairs={}",
        set.env(),
        set.generator(),
        set.len()
    )
    .unwrap();
    if let Some(m) = set.mean_return() {
        write!(out, "\tmean_return={m:?}").unwrap();
    }
    out.push('\n');
    for (e, episode) in set.episodes().iter().enumerate() {
        for (t, pair) in episode.iter().enumerate() {
            write!(out, "{e},{t}").unwrap();
            for x in &pair.observation {
                write!(out, ",{x:?}").unwrap();
            }
            writeln!(out, ",{}", pair.action).unwrap();
        }
    }
    Ok(out)
}

/// Write `set` to `path`, replacing any existing file.
pub fn save(set: &DemonstrationSet, path: &Path) -> Result<(), DemoFileError> {
    let text = to_text(set)?;
    let mut file = fs::File::create(path)?;
    file.write_all(text.as_bytes())?;
    file.sync_all()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<DemonstrationSet, DemoFileError> {
    from_text(&fs::read_to_string(path)?)
}

/// Load and check that the set belongs to `env`.
pub fn load_for(path: &Path, env: EnvId) -> Result<DemonstrationSet, DemoFileError> {
    let set = load(path)?;
    if set.env() != env {
        return Err(DemoFileError::EnvMismatch { expected: env, found: set.env() });
    }
    Ok(set)
}

pub fn from_text(text: &str) -> Result<DemonstrationSet, DemoFileError> {
    let mut lines = text.split_inclusive('\n').enumerate().map(|(i, l)| (i + 1, l));
    let (_, header) = lines.next().ok_or_else(|| parse_err(1, "empty file"))?;
    let header = header.strip_suffix('\n').ok_or_else(|| parse_err(1, "truncated header"))?;
    let mut fields = header.split('\t');
    if fields.next() != Some(MAGIC) {
        return Err(parse_err(1, format!("missing {MAGIC} header")));
    }
    match fields.next() {
        Some(VERSION) => {}
        other => return Err(parse_err(1, format!("unsupported format version {other:?}"))),
    }
    let mut env = None;
    let mut generator = None;
    let mut obs_dim = None;
    let mut pairs = None;
    let mut mean_return = None;
    for field in fields {
        let (key, value) = field.split_once('=').ok_or_else(|| parse_err(1, format!("bad header field {field:?}")))?;
        let bad = |what: &str| parse_err(1, format!("bad {what} {value:?}"));
        match key {
            "env" => env = Some(value.parse::<EnvId>().map_err(|_| bad("env"))?),
            "generator" => generator = Some(value.to_string()),
            "obs_dim" => obs_dim = Some(value.parse::<usize>().map_err(|_| bad("obs_dim"))?),
            "pairs" => pairs = Some(value.parse::<usize>().map_err(|_| bad("pair count"))?),
            "mean_return" => mean_return = Some(value.parse::<f64>().map_err(|_| bad("mean_return"))?),
            _ => return Err(parse_err(1, format!("unknown header field {key:?}"))),
        }
    }
    let env = env.ok_or_else(|| parse_err(1, "header lacks env"))?;
    let obs_dim = obs_dim.ok_or_else(|| parse_err(1, "header lacks obs_dim"))?;
    if obs_dim != env.observation_dim() {
        return Err(parse_err(1, format!("obs_dim {obs_dim} does not match {env}")));
    }

    let mut episodes: Vec<Vec<DemoPair>> = Vec::new();
    let mut last_line = 1;
    for (n, raw) in lines {
        last_line = n;
        let line = raw.strip_suffix('\n').ok_or_else(|| parse_err(n, "truncated record (no line ending)"))?;
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != obs_dim + 3 {
            return Err(parse_err(n, format!("expected {} columns, found {}", obs_dim + 3, cols.len())));
        }
        let episode: usize = cols[0].parse().map_err(|_| parse_err(n, format!("bad episode index {:?}", cols[0])))?;
        let step: usize = cols[1].parse().map_err(|_| parse_err(n, format!("bad step index {:?}", cols[1])))?;
        let observation = cols[2..2 + obs_dim]
            .iter()
            .map(|c| c.parse::<f64>().map_err(|_| parse_err(n, format!("bad observation value {c:?}"))))
            .collect::<Result<Vec<f64>, _>>()?;
        let action: usize =
            cols[obs_dim + 2].parse().map_err(|_| parse_err(n, format!("bad action {:?}", cols[obs_dim + 2])))?;
        if action >= env.action_count() {
            return Err(parse_err(n, format!("action {action} out of range for {env}")));
        }
        if episode == episodes.len() {
            episodes.push(Vec::new());
        } else if episode + 1 != episodes.len() {
            return Err(parse_err(n, format!("episode index {episode} out of order")));
        }
        let current = episodes.last_mut().expect("pushed above");
        if step != current.len() {
            return Err(parse_err(n, format!("step index {step} out of order (expected {})", current.len())));
        }
        current.push(DemoPair { observation, action });
    }
    let set = DemonstrationSet::new(env, generator.unwrap_or_default(), episodes, mean_return)
        .map_err(|e| parse_err(last_line, e.to_string()))?;
    if let Some(p) = pairs {
        if p != set.len() {
            return Err(parse_err(last_line, format!("header announces {p} pairs, file holds {}", set.len())));
        }
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> DemonstrationSet {
        let p = |o: [f64; 3], a| DemoPair { observation: o.to_vec(), action: a };
        DemonstrationSet::new(
            EnvId::PendulumDisc9,
            "test".into(),
            vec![
                vec![p([0.1, -0.2, 1.0 / 3.0], 4), p([1e-300, -0.0, 7.5], 8)],
                vec![p([f64::MIN_POSITIVE, 1.0, -8.0], 0)],
            ],
            Some(-123.456),
        )
        .unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let set = small();
        let back = from_text(&to_text(&set).unwrap()).unwrap();
        assert_eq!(back, set);
        let obs: Vec<u64> = back.pairs().flat_map(|p| p.observation.iter().map(|x| x.to_bits())).collect();
        let orig: Vec<u64> = set.pairs().flat_map(|p| p.observation.iter().map(|x| x.to_bits())).collect();
        assert_eq!(obs, orig);
    }

    #[test]
    fn truncated_last_line_names_it() {
        let text = to_text(&small()).unwrap();
        let cut = &text[..text.len() - 3];
        match from_text(cut) {
            Err(DemoFileError::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_records_name_the_line() {
        let text = to_text(&small()).unwrap().replace(",8\n", ",9\n");
        assert!(matches!(from_text(&text), Err(DemoFileError::Parse { line: 3, .. })));
        let text = to_text(&small()).unwrap().replace("0,1,", "0,5,");
        assert!(matches!(from_text(&text), Err(DemoFileError::Parse { line: 3, .. })));
        assert!(matches!(from_text("garbage\n"), Err(DemoFileError::Parse { line: 1, .. })));
    }

    #[test]
    fn header_only_file_is_rejected() {
        let text = format!("{MAGIC}\t{VERSION}\tenv=chain-4\tgenerator=x\tobs_dim=4\n");
        assert!(from_text(&text).is_err());
    }
}
