//! Adapter for an out-of-process policy speaking a line protocol.
//!
//! Request: the rendered context, ending with `END`. Response: one action per
//! line (`GATHER <item> <n> | CRAFT <recipe> | SMELT <recipe> | PLACE <station>`),
//! terminated by `END`. Anything else discards the reply.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::process::{Command, Stdio};
use std::str::FromStr;
use std::time::Duration;

use super::{IclContext, PolicyModel, Provenance, TaskProposal};
use crate::error::{Error, Result};
use crate::verifier::Assertion;
use crate::world_sim::{Action, TechTree, WorldState};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    /// Shell command; the request goes to stdin and the reply is read from stdout.
    Command(String),
    /// `host:port`; one request and one reply per connection.
    Tcp(String),
}

impl FromStr for Endpoint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.strip_prefix("tcp://") {
            Some(addr) if !addr.is_empty() => Ok(Endpoint::Tcp(addr.to_string())),
            Some(_) => Err(Error::InvalidInput("empty tcp address".into())),
            None if s.trim().is_empty() => Err(Error::InvalidInput("empty endpoint".into())),
            None => Ok(Endpoint::Command(s.to_string())),
        }
    }
}

pub fn render_context(ctx: &IclContext, state: &WorldState) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "PROTOCOL {}", ctx.protocol);
    let _ = writeln!(out, "GOAL {}", ctx.goal.as_deref().unwrap_or("-"));
    let inv: Vec<String> = state
        .inventory
        .iter()
        .filter(|(_, n)| **n > 0)
        .map(|(k, n)| format!("{k}:{n}"))
        .collect();
    let stations: Vec<&str> = state.placed_stations.iter().map(String::as_str).collect();
    let _ = writeln!(out, "STATE inventory={} stations={}", inv.join(","), stations.join(","));
    let _ = writeln!(out, "SEED {} {}", ctx.seed.entry_id, ctx.seed.task_name);
    for a in &ctx.seed.action_sequence {
        let _ = writeln!(out, "  {a}");
    }
    for (e, scores) in ctx.exemplars.iter().zip(&ctx.evidence) {
        let s: Vec<String> = scores.iter().map(|(axis, v)| format!("{}={v:.4}", axis.key())).collect();
        let _ = writeln!(out, "EXEMPLAR {} {} {}", e.entry_id, e.task_name, s.join(" "));
        for a in &e.action_sequence {
            let _ = writeln!(out, "  {a}");
        }
    }
    out.push_str("END\n");
    out
}

/// Parse a reply; `None` when it is malformed or unterminated.
fn parse_reply(text: &str) -> Option<Vec<Action>> {
    let mut plan = Vec::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
        if line == "END" {
            return Some(plan);
        }
        plan.push(line.parse().ok()?);
    }
    None
}

#[derive(Debug, Clone)]
pub struct ExternalPolicy {
    pub endpoint: Endpoint,
    pub timeout: Duration,
}

impl ExternalPolicy {
    pub fn new(endpoint: Endpoint) -> Self {
        Self {
            endpoint,
            timeout: Duration::from_secs(30),
        }
    }

    fn exchange(&self, request: &str) -> Result<String> {
        let io = |e: std::io::Error| Error::External(e.to_string());
        match &self.endpoint {
            Endpoint::Command(cmd) => {
                let mut child = Command::new("sh")
                    .arg("-c")
                    .arg(cmd)
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .spawn()
                    .map_err(io)?;
                child
                    .stdin
                    .take()
                    .ok_or_else(|| Error::External("no stdin".into()))?
                    .write_all(request.as_bytes())
                    .map_err(io)?;
                let out = child.wait_with_output().map_err(io)?;
                String::from_utf8(out.stdout).map_err(|e| Error::External(e.to_string()))
            }
            Endpoint::Tcp(addr) => {
                let mut stream = TcpStream::connect(addr).map_err(io)?;
                stream.set_read_timeout(Some(self.timeout)).map_err(io)?;
                stream.write_all(request.as_bytes()).map_err(io)?;
                let mut reply = String::new();
                let mut reader = BufReader::new(stream.take(1 << 20));
                let mut line = String::new();
                while reader.read_line(&mut line).map_err(io)? > 0 {
                    let done = line.trim() == "END";
                    reply.push_str(&line);
                    line.clear();
                    if done {
                        break;
                    }
                }
                Ok(reply)
            }
        }
    }
}

impl PolicyModel for ExternalPolicy {
    fn propose(&self, ctx: &IclContext, state: &WorldState, tree: &TechTree) -> Vec<TaskProposal> {
        let reply = match self.exchange(&render_context(ctx, state)) {
            Ok(r) => r,
            Err(e) => {
                log::warn!("external policy unavailable: {e}");
                return vec![];
            }
        };
        let Some(plan) = parse_reply(&reply) else {
            log::warn!("external policy reply discarded: malformed");
            return vec![];
        };
        let goal = ctx.goal.clone().or_else(|| match plan.last() {
            Some(Action::Craft { recipe } | Action::Smelt { recipe }) => tree.recipe(recipe).map(|r| r.output.clone()),
            Some(Action::Gather { item, .. }) => Some(item.clone()),
            _ => None,
        });
        let Some(goal) = goal else {
            log::warn!("external policy reply discarded: no goal");
            return vec![];
        };
        vec![TaskProposal {
            asserts: vec![Assertion::Produces {
                item: goal.clone(),
                count: state.count(&goal) + 1,
            }],
            goal_item: goal,
            plan,
            provenance: Provenance {
                source_entry_id: ctx.seed.entry_id,
                substitutions: vec![],
            },
        }]
    }

    fn is_deterministic(&self) -> bool {
        false
    }
}
