//! Binary checkpoint format.
//!
//! ```text
//! magic        8 bytes   "DR1CKPT\n"
//! version      u32 LE
//! header_len   u32 LE
//! header       header_len bytes of UTF-8, one `key=value` per line:
//!                profile=<amc|adni>
//!                feature_dim=<n>
//!                hidden=<n>
//!                head=<task>:<a0>,<a1>,...      (one line per head, in order)
//!                echo.<key>=<value>             (optional run-config echo)
//! n_params     u64 LE
//! params       n_params little-endian f64
//! ```

use std::collections::BTreeMap;
use std::io::{Read, Write};

use super::{ActionSpace, PolicyParams};
use crate::error::{Error, Result};
use crate::scales::Profile;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DR1CKPT\n";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: PolicyParams,
    pub echo: BTreeMap<String, String>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn write_checkpoint<W: Write>(ckpt: &Checkpoint, mut out: W) -> std::io::Result<()> {
    let p = &ckpt.params;
    let mut header = format!("profile={}\nfeature_dim={}\nhidden={}\n", p.profile, p.feature_dim, p.hidden);
    for head in &p.heads {
        let actions: Vec<String> = head.space.actions.iter().map(|a| format!("{a}")).collect();
        header.push_str(&format!("head={}:{}\n", head.space.task, actions.join(",")));
    }
    for (k, v) in &ckpt.echo {
        header.push_str(&format!("echo.{k}={v}\n"));
    }
    out.write_all(CHECKPOINT_MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    out.write_all(&(header.len() as u32).to_le_bytes())?;
    out.write_all(header.as_bytes())?;
    out.write_all(&(p.theta.len() as u64).to_le_bytes())?;
    for t in &p.theta {
        out.write_all(&t.to_le_bytes())?;
    }
    out.flush()
}

fn read_exact<R: Read, const N: usize>(input: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    input.read_exact(&mut buf).map_err(|e| bad(format!("truncated: {e}")))?;
    Ok(buf)
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<Checkpoint> {
    let magic: [u8; 8] = read_exact(&mut input)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(bad("bad magic"));
    }
    let version = u32::from_le_bytes(read_exact(&mut input)?);
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let header_len = u32::from_le_bytes(read_exact(&mut input)?) as usize;
    let mut header = vec![0u8; header_len];
    input.read_exact(&mut header).map_err(|e| bad(format!("truncated header: {e}")))?;
    let header = String::from_utf8(header).map_err(|_| bad("header is not UTF-8"))?;

    let mut profile = None;
    let mut feature_dim = None;
    let mut hidden = None;
    let mut heads: Vec<ActionSpace> = Vec::new();
    let mut echo = BTreeMap::new();
    for line in header.lines() {
        let (key, value) = line.split_once('=').ok_or_else(|| bad(format!("bad header line `{line}`")))?;
        let int = |v: &str| v.parse::<usize>().map_err(|_| bad(format!("bad integer `{v}`")));
        match key {
            "profile" => profile = Some(value.parse::<Profile>().map_err(|e| bad(e.to_string()))?),
            "feature_dim" => feature_dim = Some(int(value)?),
            "hidden" => hidden = Some(int(value)?),
            "head" => {
                let (task, actions) = value.split_once(':').ok_or_else(|| bad("bad head line"))?;
                let actions = actions
                    .split(',')
                    .map(|a| a.parse::<f64>().map_err(|_| bad(format!("bad action `{a}`"))))
                    .collect::<Result<Vec<_>>>()?;
                heads.push(ActionSpace { task: task.to_string(), actions });
            }
            k if k.starts_with("echo.") => {
                echo.insert(k["echo.".len()..].to_string(), value.to_string());
            }
            other => return Err(bad(format!("unknown header key `{other}`"))),
        }
    }
    let profile = profile.ok_or_else(|| bad("missing profile"))?;
    let feature_dim = feature_dim.ok_or_else(|| bad("missing feature_dim"))?;
    let hidden = hidden.ok_or_else(|| bad("missing hidden"))?;
    let tasks: Vec<String> = heads.iter().map(|h| h.task.clone()).collect();
    let mut params = PolicyParams::new(profile, feature_dim, hidden, &tasks)?;
    for (head, declared) in params.heads.iter().zip(&heads) {
        if head.space != *declared {
            return Err(bad(format!("action space of {} does not match the registry", declared.task)));
        }
    }

    let n = u64::from_le_bytes(read_exact(&mut input)?) as usize;
    if n != params.theta.len() {
        return Err(bad(format!("expected {} parameters, found {n}", params.theta.len())));
    }
    for t in params.theta.iter_mut() {
        *t = f64::from_le_bytes(read_exact(&mut input)?);
    }
    let mut rest = Vec::new();
    input.read_to_end(&mut rest).map_err(|e| bad(e.to_string()))?;
    if !rest.is_empty() {
        return Err(bad("trailing bytes"));
    }
    Ok(Checkpoint { params, echo })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::PolicyConfig;

    #[test]
    fn round_trip_is_bit_exact() {
        let params = PolicyParams::init(Profile::Adni, &PolicyConfig::default(), 3).unwrap();
        let ckpt = Checkpoint { params, echo: [("stage1.lr".to_string(), "0.05".to_string())].into_iter().collect() };
        let mut buf = Vec::new();
        write_checkpoint(&ckpt, &mut buf).unwrap();
        let back = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(back, ckpt);
        let mut again = Vec::new();
        write_checkpoint(&back, &mut again).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn rejects_corruption() {
        let ckpt = Checkpoint { params: PolicyParams::zeros(Profile::Amc, 4).unwrap(), echo: BTreeMap::new() };
        let mut buf = Vec::new();
        write_checkpoint(&ckpt, &mut buf).unwrap();
        assert!(read_checkpoint(&buf[..buf.len() - 3]).is_err());
        let mut bad_magic = buf.clone();
        bad_magic[0] = b'X';
        assert!(read_checkpoint(bad_magic.as_slice()).is_err());
        let mut extra = buf.clone();
        extra.push(0);
        assert!(read_checkpoint(extra.as_slice()).is_err());
    }
}
