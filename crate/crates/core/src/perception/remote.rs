use std::time::Duration;

use chrono::NaiveDate;
use serde_json::{Map, Value};

use super::{
    clean_phrases, rank_salience, FusedText, NodeContext, PageView, PathSummary, PerceptionProvider,
    PerceptionResult, ProviderMode, SalientItem, MAX_DOCUMENT_NODES, MAX_PATH_NODES, MAX_QUERY_NODES,
    NODE_EXTRACTION_SYSTEM, NODE_EXTRACTION_USER, PAGE_PERCEPTION_SYSTEM, PATH_SUMMARY_SYSTEM, PATH_SUMMARY_USER,
    QUERY_NODES_SYSTEM, QUERY_NODES_USER,
};
use crate::chat::{extract_json_object, ChatClient, ChatMessage, ChatRequest, ContentPart};
use crate::error::{Error, Result};

const NODE_MAX_TOKENS: u32 = 256;
const QUERY_MAX_TOKENS: u32 = 200;
const QUERY_TIMEOUT: Duration = Duration::from_secs(30);
const PERCEPTION_MAX_TOKENS: u32 = 1024;
const SUMMARY_MAX_TOKENS: u32 = 256;

/// Vision-language model behind an OpenAI-compatible chat endpoint.
pub struct RemotePerception {
    client: ChatClient,
}

impl RemotePerception {
    pub fn new(client: ChatClient) -> Self {
        RemotePerception { client }
    }

    fn ask(&self, messages: Vec<ChatMessage>, max_tokens: u32, timeout: Option<Duration>) -> Result<Map<String, Value>> {
        let reply = self.client.complete(&ChatRequest {
            messages,
            max_tokens: Some(max_tokens),
            temperature: Some(0.0),
            timeout,
        })?;
        extract_json_object(&reply)
    }
}

fn require<'a>(obj: &'a Map<String, Value>, key: &str) -> Result<&'a Value> {
    obj.get(key)
        .ok_or_else(|| Error::Reply(format!("reply lacks the `{key}` key")))
}

fn string_field(obj: &Map<String, Value>, key: &str) -> Result<String> {
    match require(obj, key)? {
        Value::String(s) => Ok(s.clone()),
        Value::Null => Ok(String::new()),
        other => Err(Error::Reply(format!("`{key}` is not a string: {other}"))),
    }
}

fn phrase_list(obj: &Map<String, Value>, key: &str, cap: usize, min_expected: usize) -> Result<Vec<String>> {
    let arr = require(obj, key)?
        .as_array()
        .ok_or_else(|| Error::Reply(format!("`{key}` is not an array")))?;
    let raw = arr
        .iter()
        .map(|v| {
            v.as_str()
                .map(str::to_string)
                .ok_or_else(|| Error::Reply(format!("`{key}` holds a non-string entry: {v}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut phrases = clean_phrases(raw);
    if phrases.len() > cap {
        log::warn!("reply listed {} phrases under `{key}`, keeping the first {cap}", phrases.len());
        phrases.truncate(cap);
    }
    if phrases.len() < min_expected {
        log::warn!("reply listed only {} phrase(s) under `{key}`", phrases.len());
    }
    Ok(phrases)
}

/// Salient items may come as plain strings (ranked by position) or as objects
/// with a phrase and an optional numeric salience.
fn salient_items(value: &Value) -> Result<Vec<SalientItem>> {
    let arr = value
        .as_array()
        .ok_or_else(|| Error::Reply("`salient_items` is not an array".into()))?;
    let mut named: Vec<(String, Option<f64>)> = Vec::with_capacity(arr.len());
    for v in arr {
        match v {
            Value::String(s) => named.push((s.clone(), None)),
            Value::Object(o) => {
                let phrase = ["phrase", "item", "name", "text", "label"]
                    .iter()
                    .find_map(|k| o.get(*k).and_then(Value::as_str))
                    .ok_or_else(|| Error::Reply(format!("salient item without a phrase: {v}")))?;
                let salience = ["salience", "score", "confidence", "weight"]
                    .iter()
                    .find_map(|k| o.get(*k).and_then(Value::as_f64));
                named.push((phrase.to_string(), salience));
            }
            other => return Err(Error::Reply(format!("unsupported salient item: {other}"))),
        }
    }
    let n = named.len();
    let mut items: Vec<SalientItem> = Vec::new();
    for (rank, (phrase, salience)) in named.into_iter().enumerate() {
        let phrase = phrase.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
        if phrase.is_empty() || items.iter().any(|i| i.phrase == phrase) {
            continue;
        }
        let salience = salience
            .filter(|s| s.is_finite())
            .map(|s| s.clamp(0.0, 1.0))
            .unwrap_or_else(|| rank_salience(rank, n));
        items.push(SalientItem { phrase, salience });
    }
    items.sort_by(|a, b| b.salience.total_cmp(&a.salience));
    Ok(items)
}

pub(crate) fn parse_perception(reply: &Map<String, Value>) -> Result<PerceptionResult> {
    let result = PerceptionResult {
        ocr_text: string_field(reply, "ocr_text")?,
        visual_summary: string_field(reply, "visual_summary")?,
        salient_items: salient_items(require(reply, "salient_items")?)?,
    };
    result.validate()?;
    Ok(result)
}

fn fill(template: &str, slots: &[(&str, &str)]) -> String {
    slots
        .iter()
        .fold(template.to_string(), |acc, (k, v)| acc.replace(&format!("{{{k}}}"), v))
}

impl PerceptionProvider for RemotePerception {
    fn mode(&self) -> ProviderMode {
        ProviderMode::Remote
    }

    fn perceive_page(&self, page: &PageView<'_>) -> Result<PerceptionResult> {
        let reply = self.ask(
            vec![
                ChatMessage::system(PAGE_PERCEPTION_SYSTEM),
                ChatMessage::user_parts(vec![ContentPart::Jpeg(page.raster.to_vec())]),
            ],
            PERCEPTION_MAX_TOKENS,
            None,
        )?;
        parse_perception(&reply).map_err(|e| Error::Page {
            page_id: page.page_id.to_string(),
            message: e.to_string(),
        })
    }

    fn extract_nodes(&self, fused: &FusedText, context: &NodeContext) -> Result<Vec<String>> {
        let date = context.date.map(|d| d.format("%Y-%m-%d").to_string()).unwrap_or_default();
        let user = fill(
            NODE_EXTRACTION_USER,
            &[
                ("date", &date),
                ("timestamp", context.timestamp.as_deref().unwrap_or("")),
                ("subject", context.subject.as_deref().unwrap_or("")),
                ("summary", context.summary.as_deref().unwrap_or("")),
                ("detail", &fused.text),
            ],
        );
        let reply = self.ask(
            vec![ChatMessage::system(NODE_EXTRACTION_SYSTEM), ChatMessage::user(user)],
            NODE_MAX_TOKENS,
            None,
        )?;
        phrase_list(&reply, "semantic_nodes", MAX_DOCUMENT_NODES, 3)
    }

    fn extract_query_nodes(&self, question: &str) -> Result<Vec<String>> {
        if question.trim().is_empty() {
            return Err(Error::NoExtractableNodes);
        }
        let reply = self.ask(
            vec![
                ChatMessage::system(QUERY_NODES_SYSTEM),
                ChatMessage::user(fill(QUERY_NODES_USER, &[("question", question)])),
            ],
            QUERY_MAX_TOKENS,
            Some(QUERY_TIMEOUT),
        )?;
        let phrases = phrase_list(&reply, "semantic_nodes", MAX_QUERY_NODES, 3)?;
        if phrases.is_empty() {
            return Err(Error::NoExtractableNodes);
        }
        Ok(phrases)
    }

    fn summarize_path(&self, perception: &PerceptionResult, date: NaiveDate) -> Result<PathSummary> {
        let perception_text = serde_json::to_string(perception)?;
        let user = fill(
            PATH_SUMMARY_USER,
            &[("date", &date.format("%Y-%m-%d").to_string()), ("perception_text", &perception_text)],
        );
        let reply = self.ask(
            vec![ChatMessage::system(PATH_SUMMARY_SYSTEM), ChatMessage::user(user)],
            SUMMARY_MAX_TOKENS,
            None,
        )?;
        Ok(PathSummary {
            semantic_nodes: phrase_list(&reply, "semantic_nodes", MAX_PATH_NODES, 0)?,
            em_path: string_field(&reply, "em_path")?.trim().to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chat::test_server::{chat_reply, serve};
    use crate::chat::ApiConfig;
    use serde_json::json;

    fn provider(base: &str) -> RemotePerception {
        let mut cfg = ApiConfig::new(base, "vlm");
        cfg.initial_backoff = Duration::from_millis(1);
        RemotePerception::new(ChatClient::new(cfg).unwrap())
    }

    #[test]
    fn node_extraction_request_and_reply() {
        let reply = r#"{"semantic_nodes": ["grand plaza lisbon", "hotel booking", "2 nights", "may 10", "may 12", "240 eur", "reservation"]}"#;
        let server = serve(vec![(200, chat_reply(reply))]);
        let ctx = NodeContext {
            date: NaiveDate::from_ymd_opt(2022, 5, 7),
            timestamp: Some("2022-05-07T09:12".into()),
            subject: Some("Hotel booking confirmation".into()),
            summary: Some("Booked Grand Plaza Lisbon for 2 nights".into()),
        };
        let detail = "Your reservation at Grand Plaza Lisbon from May 10 to May 12 is confirmed. Total 240 EUR.";
        let nodes = provider(&server.base_url)
            .extract_nodes(&super::super::fuse_text(detail, ""), &ctx)
            .unwrap();
        assert_eq!(
            nodes,
            vec!["grand plaza lisbon", "hotel booking", "2 nights", "may 10", "may 12", "240 eur", "reservation"]
        );
        let req = server.requests.lock().unwrap()[0].clone();
        assert_eq!(req["max_tokens"], json!(256));
        assert_eq!(req["temperature"], json!(0.0));
        assert_eq!(req["messages"][0]["content"], json!(NODE_EXTRACTION_SYSTEM));
        let user = req["messages"][1]["content"].as_str().unwrap();
        assert!(user.contains("Day: 2022-05-07\nTimestamp: 2022-05-07T09:12\nSubject: Hotel booking confirmation"));
        assert!(user.contains(&format!("Detail: {detail}")));
    }

    #[test]
    fn query_nodes_request() {
        let reply = r#"{"semantic_nodes": ["2022-05-10", "lisbon", "hotel booking", "number of nights", "reservation"]}"#;
        let server = serve(vec![(200, chat_reply(reply))]);
        let q = "On 2022-05-10 in Lisbon, what hotel did I book and how many nights?";
        let nodes = provider(&server.base_url).extract_query_nodes(q).unwrap();
        assert_eq!(nodes, vec!["2022-05-10", "lisbon", "hotel booking", "number of nights", "reservation"]);
        let req = server.requests.lock().unwrap()[0].clone();
        assert_eq!(req["max_tokens"], json!(200));
        assert!(req["messages"][1]["content"].as_str().unwrap().contains(&format!("Q: {q}")));
    }

    #[test]
    fn perception_without_ocr_text_is_rejected() {
        let server = serve(vec![(200, chat_reply(r#"{"visual_summary": "x", "salient_items": []}"#))]);
        let view = PageView {
            page_id: "page-2022-05-07",
            raster: &[1, 2, 3],
            sidecar: None,
            sources: &[],
        };
        let err = provider(&server.base_url).perceive_page(&view).unwrap_err();
        assert!(err.to_string().contains("ocr_text"), "{err}");
        let req = server.requests.lock().unwrap()[0].clone();
        let url = req["messages"][1]["content"][0]["image_url"]["url"].as_str().unwrap();
        assert!(url.starts_with("data:image/jpeg;base64,"));
    }

    #[test]
    fn salient_item_shapes() {
        let obj = extract_json_object(
            r#"{"ocr_text": "a", "visual_summary": "", "salient_items": ["Blue Cafe", {"phrase": "12 eur", "salience": 0.9}]}"#,
        )
        .unwrap();
        let r = parse_perception(&obj).unwrap();
        assert_eq!(r.salient_items[0].phrase, "12 eur");
        assert_eq!(r.salient_items[1].phrase, "blue cafe");
        assert!((r.salient_items[1].salience - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn path_summary_reply() {
        let server = serve(vec![(
            200,
            chat_reply(r#"{"semantic_nodes": ["diagnosis", "treatment"], "em_path": "Saw a doctor."}"#),
        )]);
        let s = provider(&server.base_url)
            .summarize_path(&PerceptionResult::default(), NaiveDate::from_ymd_opt(2023, 1, 2).unwrap())
            .unwrap();
        assert_eq!(s.semantic_nodes, vec!["diagnosis", "treatment"]);
        assert_eq!(s.em_path, "Saw a doctor.");
        let req = server.requests.lock().unwrap()[0].clone();
        assert!(req["messages"][1]["content"].as_str().unwrap().starts_with("Date: 2023-01-02\n"));
    }

    #[test]
    fn missing_em_path_is_an_error() {
        let server = serve(vec![(200, chat_reply(r#"{"semantic_nodes": []}"#))]);
        let r = provider(&server.base_url)
            .summarize_path(&PerceptionResult::default(), NaiveDate::from_ymd_opt(2023, 1, 2).unwrap());
        assert!(matches!(r, Err(Error::Reply(_))));
    }
}
