//! HTTP answerer: POSTs `{"question", "prompt"}` as JSON and reads
//! `{"answer"}` back. Any failure leaves the instance unanswered.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{fit_to_budget, parse_answer_text, serialize_table, Answerer};
use crate::prompt::PromptBudget;
use crate::sql::Value;
use crate::table::{QaInstance, Table};

pub const ENDPOINT_VAR: &str = "TABREDUCE_ANSWERER_URL";
pub const KEY_VAR: &str = "TABREDUCE_ANSWERER_KEY";

#[derive(Serialize)]
struct Request<'a> {
    question: &'a str,
    prompt: String,
}

#[derive(Deserialize)]
struct Response {
    answer: Option<String>,
}

pub struct RemoteAnswerer {
    endpoint: String,
    api_key: Option<String>,
    budget: PromptBudget,
    agent: ureq::Agent,
}

impl RemoteAnswerer {
    pub fn new(endpoint: impl Into<String>, api_key: Option<String>, budget: PromptBudget) -> RemoteAnswerer {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(60)))
            .build()
            .into();
        RemoteAnswerer {
            endpoint: endpoint.into(),
            api_key,
            budget,
            agent,
        }
    }

    /// Reads the endpoint (required) and bearer key (optional) from the environment.
    pub fn from_env(budget: PromptBudget) -> Option<RemoteAnswerer> {
        let endpoint = std::env::var(ENDPOINT_VAR).ok().filter(|s| !s.is_empty())?;
        Some(RemoteAnswerer::new(endpoint, std::env::var(KEY_VAR).ok(), budget))
    }

    fn call(&self, instance: &QaInstance, context: &Table) -> Result<Option<String>, ureq::Error> {
        let body = Request {
            question: &instance.question,
            prompt: serialize_table(&fit_to_budget(context, self.budget.max_tokens())),
        };
        let mut req = self.agent.post(&self.endpoint);
        if let Some(k) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {k}"));
        }
        let resp: Response = req.send_json(&body)?.body_mut().read_json()?;
        Ok(resp.answer)
    }
}

impl Answerer for RemoteAnswerer {
    fn answer(&self, instance: &QaInstance, context: &Table) -> Option<Value> {
        self.call(instance, context).ok().flatten().map(|a| parse_answer_text(&a))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;

    /// Serves `n` requests, answering each with `reply` as the JSON body.
    fn serve(n: usize, status: u16, reply: &'static str) -> (String, std::thread::JoinHandle<Vec<String>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/answer", listener.local_addr().unwrap());
        let handle = std::thread::spawn(move || {
            let mut bodies = Vec::new();
            for _ in 0..n {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut body = vec![0; len];
                reader.read_exact(&mut body).unwrap();
                bodies.push(String::from_utf8(body).unwrap());
                let mut s = stream;
                write!(
                    s,
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
                    reply.len()
                )
                .unwrap();
            }
            bodies
        });
        (url, handle)
    }

    fn setup() -> (QaInstance, Table) {
        let t = Table::from_strings("t", &["year", "city"], &[&["2004", "athens"]]);
        let q = QaInstance::new("q", "which city?", "t");
        (q, t)
    }

    #[test]
    fn round_trip() {
        let (url, h) = serve(1, 200, r#"{"answer":"Athens"}"#);
        let (q, t) = setup();
        let a = RemoteAnswerer::new(url, Some("k".into()), PromptBudget::new(64).unwrap());
        assert_eq!(a.answer(&q, &t), Some(Value::Text("Athens".into())));
        let bodies = h.join().unwrap();
        let v: serde_json::Value = serde_json::from_str(&bodies[0]).unwrap();
        assert_eq!(v["question"], "which city?");
        assert_eq!(v["prompt"], "row1: (year=2004, city=athens)");
    }

    #[test]
    fn failures_are_unanswered() {
        let (q, t) = setup();
        let (url, h) = serve(1, 500, "{}");
        let a = RemoteAnswerer::new(url, None, PromptBudget::new(64).unwrap());
        assert_eq!(a.answer(&q, &t), None);
        h.join().unwrap();
        let (url, h) = serve(1, 200, "not json");
        let a = RemoteAnswerer::new(url, None, PromptBudget::new(64).unwrap());
        assert_eq!(a.answer(&q, &t), None);
        h.join().unwrap();
        // nothing listening
        let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let a = RemoteAnswerer::new(format!("http://127.0.0.1:{port}/"), None, PromptBudget::new(64).unwrap());
        assert_eq!(a.answer(&q, &t), None);
    }
}
