//! Text-mode single session. A line answers the pending question when there is one and is
//! a new command otherwise. `:trace` prints the last trace as JSON, `:project` lists wall
//! types, `:quit` exits.

use std::io::{BufRead, Write};
use std::sync::Arc;

use nlbim_core::kernel::{format_mm, seeded_project};
use nlbim_core::orchestrator::{Engine, PipelineTrace, Session, TurnOutcome};

pub fn run(engine: Arc<Engine>, seed: u64, input: impl BufRead, mut out: impl Write) -> anyhow::Result<()> {
    let mut session = Session::new(engine, "repl", seed, seeded_project());
    let mut last_trace: Option<u32> = None;
    write!(out, "> ")?;
    out.flush()?;
    for line in input.lines() {
        let line = line?;
        let line = line.trim();
        match line {
            "" => {}
            ":quit" | ":q" => break,
            ":trace" => match last_trace.and_then(|t| session.trace(t)) {
                Some(t) => writeln!(out, "{}", serde_json::to_string_pretty(t)?)?,
                None => writeln!(out, "no trace yet")?,
            },
            ":project" => {
                let p = session.project();
                if p.wall_types.is_empty() {
                    writeln!(out, "no wall types")?;
                }
                for t in &p.wall_types {
                    let flag = if t.non_compliant { " [non-compliant]" } else { "" };
                    writeln!(
                        out,
                        "{} {} (rev {}, {} mm){flag}",
                        t.id,
                        t.spec.wall_detail_name,
                        t.revision,
                        format_mm(t.spec.total_thickness())
                    )?;
                    for l in &t.spec.layers {
                        writeln!(out, "    {:<10} {:>8} mm  {}", l.layer_type.to_string(), format_mm(l.thickness), l.material)?;
                    }
                }
            }
            text => {
                let res = if session.pending_question().is_some() {
                    session.answer_question(text)
                } else {
                    session.handle_utterance(text)
                };
                match res {
                    Err(e) => writeln!(out, "error: {e}")?,
                    Ok(outcome) => {
                        let seq = session.turns().len() as u32;
                        if let Some(t) = session.trace(seq) {
                            print_steps(&mut out, t)?;
                            last_trace = Some(seq);
                        }
                        match &outcome {
                            TurnOutcome::NeedsAnswer { question } => writeln!(out, "? {}", question.text)?,
                            _ => {
                                let reply = session.turns().last().map_or("", |t| t.text.as_str());
                                writeln!(out, "{reply}")?;
                            }
                        }
                    }
                }
            }
        }
        write!(out, "> ")?;
        out.flush()?;
    }
    writeln!(out)?;
    Ok(())
}

fn print_steps(out: &mut impl Write, trace: &PipelineTrace) -> std::io::Result<()> {
    for r in &trace.steps {
        let status = if r.skipped { "skipped" } else { "done" };
        let detail = if r.skipped {
            r.reason.clone().unwrap_or_default()
        } else {
            r.output.lines().next().unwrap_or("").chars().take(100).collect()
        };
        writeln!(out, "  #{} {:<9} {:<7} {:>6} ms  {detail}", r.attempt, r.step.to_string(), status, r.duration_ms)?;
    }
    Ok(())
}
