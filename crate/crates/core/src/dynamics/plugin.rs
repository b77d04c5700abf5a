//! External systems driven over a line-delimited JSON subprocess protocol.
//!
//! Requests, one JSON object per line on the child's stdin:
//! `{"op":"f","x":[..],"u":[..]}` and `{"op":"h","x":[..],"u":[..]}`.
//! Responses, one per line on stdout: `{"dx":[..]}` and `{"y":[..]}`.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::NonlinearSystem;
use crate::error::{Error, Result};

#[derive(Serialize)]
struct Request<'a> {
    op: &'a str,
    x: &'a [f64],
    u: &'a [f64],
}

#[derive(Deserialize)]
struct Response {
    #[serde(default)]
    dx: Option<Vec<f64>>,
    #[serde(default)]
    y: Option<Vec<f64>>,
}

struct Pipe {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

pub struct SubprocessSystem {
    name: String,
    state_dim: usize,
    input_dim: usize,
    output_dim: usize,
    equation_variables: Option<Vec<Vec<usize>>>,
    pipe: Mutex<Pipe>,
}

impl SubprocessSystem {
    pub fn spawn(
        command: &[String],
        state_dim: usize,
        input_dim: usize,
        output_dim: usize,
        equation_variables: Option<Vec<Vec<usize>>>,
    ) -> Result<Self> {
        let (program, args) = command
            .split_first()
            .ok_or_else(|| Error::Plugin("empty plugin command".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| Error::Plugin(format!("cannot start `{program}`: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(Self {
            name: program.clone(),
            state_dim,
            input_dim,
            output_dim,
            equation_variables,
            pipe: Mutex::new(Pipe { child, stdin, stdout }),
        })
    }

    fn call(&self, op: &str, x: &[f64], u: &[f64], expected: usize) -> Result<Vec<f64>> {
        let mut pipe = self.pipe.lock().map_err(|_| Error::Plugin("poisoned pipe".into()))?;
        let line = serde_json::to_string(&Request { op, x, u })?;
        writeln!(pipe.stdin, "{line}")?;
        pipe.stdin.flush()?;
        let mut reply = String::new();
        if pipe.stdout.read_line(&mut reply)? == 0 {
            return Err(Error::Plugin(format!("`{}` closed its output", self.name)));
        }
        let resp: Response = serde_json::from_str(reply.trim())
            .map_err(|e| Error::Plugin(format!("malformed reply {reply:?}: {e}")))?;
        let values = match op {
            "f" => resp.dx,
            _ => resp.y,
        }
        .ok_or_else(|| Error::Plugin(format!("reply to `{op}` lacks its field")))?;
        if values.len() != expected {
            return Err(Error::Plugin(format!(
                "reply to `{op}` has {} entries, expected {expected}",
                values.len()
            )));
        }
        Ok(values)
    }
}

impl Drop for SubprocessSystem {
    fn drop(&mut self) {
        if let Ok(pipe) = self.pipe.get_mut() {
            let _ = pipe.child.kill();
            let _ = pipe.child.wait();
        }
    }
}

impl NonlinearSystem for SubprocessSystem {
    fn name(&self) -> &str {
        &self.name
    }
    fn state_dim(&self) -> usize {
        self.state_dim
    }
    fn input_dim(&self) -> usize {
        self.input_dim
    }
    fn output_dim(&self) -> usize {
        self.output_dim
    }

    fn derivative(&self, x: &[f64], u: &[f64], dx: &mut [f64]) -> Result<()> {
        dx.copy_from_slice(&self.call("f", x, u, self.state_dim)?);
        Ok(())
    }

    fn output(&self, x: &[f64], u: &[f64], y: &mut [f64]) -> Result<()> {
        y.copy_from_slice(&self.call("h", x, u, self.output_dim)?);
        Ok(())
    }

    fn equation_variables(&self) -> Vec<Vec<usize>> {
        self.equation_variables.clone().unwrap_or_else(|| {
            let all: Vec<usize> = (0..self.state_dim + self.input_dim).collect();
            vec![all; self.state_dim]
        })
    }
}
