//! Pulling code and structured data out of model replies.
//!
//! Code comes from the last fenced block in the reply. Structured data comes
//! from the last fenced block that parses as a JSON object, falling back to
//! the last bare `{...}` span when the reply has no fences at all.

use serde::de::DeserializeOwned;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FencedBlock {
    pub info: String,
    pub body: String,
}

/// All fenced blocks in order. An unterminated final fence runs to the end.
pub fn fenced_blocks(reply: &str) -> Vec<FencedBlock> {
    let mut blocks = Vec::new();
    let mut current: Option<(String, usize, Vec<&str>)> = None;
    for line in reply.lines() {
        let trimmed = line.trim_start();
        let ticks = trimmed.chars().take_while(|&c| c == '`').count();
        match current.as_mut() {
            None if ticks >= 3 => {
                current = Some((trimmed[ticks..].trim().to_string(), ticks, Vec::new()));
            }
            None => {}
            Some((_, open, _)) if ticks >= *open && trimmed[ticks..].trim().is_empty() => {
                let (info, _, body) = current.take().unwrap();
                blocks.push(FencedBlock {
                    info,
                    body: join_body(&body),
                });
            }
            Some((_, _, body)) => body.push(line),
        }
    }
    if let Some((info, _, body)) = current {
        blocks.push(FencedBlock {
            info,
            body: join_body(&body),
        });
    }
    blocks
}

fn join_body(lines: &[&str]) -> String {
    let mut s = lines.join("\n");
    s.push('\n');
    s
}

/// Code from the last fenced block, if any non-blank one exists.
pub fn last_code_block(reply: &str) -> Option<String> {
    fenced_blocks(reply)
        .into_iter()
        .rev()
        .find(|b| !b.body.trim().is_empty())
        .map(|b| b.body)
}

/// Deserializes the last structured block into `T`.
pub fn last_structured<T: DeserializeOwned>(reply: &str) -> Option<T> {
    let blocks = fenced_blocks(reply);
    for b in blocks.iter().rev() {
        if let Ok(v) = serde_json::from_str::<T>(b.body.trim()) {
            return Some(v);
        }
    }
    if blocks.is_empty() {
        let start = reply.find('{')?;
        let end = reply.rfind('}')?;
        if end > start {
            return serde_json::from_str(&reply[start..=end]).ok();
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Deserialize, Debug, PartialEq)]
    struct V {
        ok: bool,
    }

    #[test]
    fn last_block_wins() {
        let reply = "Sure!\n```rust\nfn a() {}\n```\nBetter:\n```rust\nfn b() {}\n```\nDone.";
        assert_eq!(last_code_block(reply).unwrap(), "fn b() {}\n");
    }

    #[test]
    fn no_block_is_none() {
        assert_eq!(last_code_block("just prose"), None);
    }

    #[test]
    fn structured_skips_non_json_blocks() {
        let reply = "```json\n{\"ok\": false}\n```\n```json\n{\"ok\": true}\n```\n```\nnot json\n```";
        assert_eq!(last_structured::<V>(reply), Some(V { ok: true }));
    }

    #[test]
    fn bare_json_without_fences() {
        assert_eq!(last_structured::<V>("verdict: {\"ok\": true}"), Some(V { ok: true }));
        assert_eq!(last_structured::<V>("nothing here"), None);
    }

    #[test]
    fn longer_fences_nest_shorter_ones() {
        let reply = "````md\n```\ninner\n```\n````";
        assert_eq!(last_code_block(reply).unwrap(), "```\ninner\n```\n");
    }
}
