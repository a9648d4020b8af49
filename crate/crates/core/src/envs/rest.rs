//! REST environment: curl lines are parsed and resolved against a mock
//! route table; an unroutable request is non-executable and success requires
//! the routed response to match the test's oracle bytes. Deletion-style
//! tests compare the curl line verbatim instead of executing it.

use serde::{Deserialize, Serialize};
use url::Url;

use super::EvalOutcome;
use crate::metrics::ErrorCategory;
use crate::spec::{CompareMode, TestCase};

/// One mock route: method, path, canonicalized query multiset, optional
/// body, and the canned response it returns.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RouteEntry {
    pub method: String,
    pub path: String,
    #[serde(default)]
    pub query: Vec<(String, String)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub body: Option<String>,
    pub response: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RestConfig {
    pub routes: Vec<RouteEntry>,
}

/// A parsed curl invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct CurlRequest {
    pub method: String,
    pub url: Url,
    pub body: Option<String>,
}

impl CurlRequest {
    /// Query pairs sorted for order-insensitive comparison; keys stay
    /// case-sensitive.
    fn query_multiset(&self) -> Vec<(String, String)> {
        let mut pairs: Vec<(String, String)> = self
            .url
            .query_pairs()
            .map(|(k, v)| (k.into_owned(), v.into_owned()))
            .collect();
        pairs.sort();
        pairs
    }
}

fn shell_tokens(line: &str) -> Result<Vec<String>, String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    let mut chars = line.chars().peekable();
    let mut in_token = false;
    while let Some(c) = chars.next() {
        match c {
            '\'' => {
                in_token = true;
                for q in chars.by_ref() {
                    if q == '\'' {
                        break;
                    }
                    current.push(q);
                }
            }
            '"' => {
                in_token = true;
                loop {
                    match chars.next() {
                        None => return Err("unterminated double quote".into()),
                        Some('"') => break,
                        Some('\\') => match chars.next() {
                            Some(esc) => current.push(esc),
                            None => return Err("dangling escape".into()),
                        },
                        Some(other) => current.push(other),
                    }
                }
            }
            c if c.is_whitespace() => {
                if in_token || !current.is_empty() {
                    tokens.push(std::mem::take(&mut current));
                    in_token = false;
                }
            }
            other => {
                in_token = true;
                current.push(other);
            }
        }
    }
    if in_token || !current.is_empty() {
        tokens.push(current);
    }
    Ok(tokens)
}

/// Flags whose value token must be consumed but is otherwise ignored.
const SKIPPED_VALUE_FLAGS: [&str; 6] = ["-H", "--header", "-o", "--output", "-u", "--user"];
const DATA_FLAGS: [&str; 5] = [
    "-d",
    "--data",
    "--data-raw",
    "--data-binary",
    "--data-urlencode",
];

/// Parse a curl command line into method, URL, and body. The method
/// defaults to GET, or POST when a data flag is present.
pub fn parse_curl(line: &str) -> Result<CurlRequest, String> {
    let tokens = shell_tokens(line)?;
    let mut iter = tokens.iter();
    match iter.next().map(String::as_str) {
        Some("curl") => {}
        _ => return Err("line does not start with curl".into()),
    }

    let mut method: Option<String> = None;
    let mut body: Option<String> = None;
    let mut url_text: Option<String> = None;
    while let Some(token) = iter.next() {
        match token.as_str() {
            "-X" | "--request" => {
                method = Some(iter.next().ok_or("missing method after -X")?.to_uppercase());
            }
            flag if DATA_FLAGS.contains(&flag) => {
                body = Some(iter.next().ok_or("missing body after data flag")?.clone());
            }
            flag if SKIPPED_VALUE_FLAGS.contains(&flag) => {
                iter.next()
                    .ok_or_else(|| format!("missing value after {flag}"))?;
            }
            flag if flag.starts_with('-') => {}
            other => {
                if url_text.is_none() {
                    url_text = Some(other.to_string());
                }
            }
        }
    }

    let url_text = url_text.ok_or("no URL in curl line")?;
    let url = Url::parse(&url_text).map_err(|err| format!("invalid URL {url_text:?}: {err}"))?;
    let method = method.unwrap_or_else(|| {
        if body.is_some() {
            "POST".to_string()
        } else {
            "GET".to_string()
        }
    });
    Ok(CurlRequest { method, url, body })
}

fn route_response<'a>(request: &CurlRequest, config: &'a RestConfig) -> Option<&'a str> {
    let query = request.query_multiset();
    config.routes.iter().find_map(|route| {
        let mut route_query = route.query.clone();
        route_query.sort();
        let matches = route.method.to_uppercase() == request.method
            && route.path == request.url.path()
            && route_query == query
            && route.body == request.body;
        matches.then_some(route.response.as_str())
    })
}

/// True when two paths name the same endpoint. Identical paths always do;
/// paths differing only in a value-like final segment (a resource id, which
/// contains digits) are the same endpoint called with different arguments.
fn same_endpoint(a: &str, b: &str) -> bool {
    if a == b {
        return true;
    }
    let (a_parent, a_last) = a.rsplit_once('/').unwrap_or(("", a));
    let (b_parent, b_last) = b.rsplit_once('/').unwrap_or(("", b));
    let value_like = |s: &str| s.chars().any(|c| c.is_ascii_digit());
    a_parent == b_parent && value_like(a_last) && value_like(b_last)
}

/// Wrong endpoint selection vs wrong parameters: the method plus endpoint
/// path is the API identity for REST tasks; query, body, and id segments
/// are arguments.
fn categorize_rest(pred: &str, test: &TestCase, success: bool) -> ErrorCategory {
    if success {
        return ErrorCategory::None;
    }
    let pred_req = match parse_curl(pred) {
        Ok(r) => r,
        Err(_) => return ErrorCategory::NonExecutable,
    };
    let endpoint_match = test.gold_programs.iter().any(|gold| {
        extract_gold_curl(gold.raw_text.as_str())
            .map(|g| {
                g.method == pred_req.method && same_endpoint(g.url.path(), pred_req.url.path())
            })
            .unwrap_or(false)
    });
    if endpoint_match {
        ErrorCategory::WrongArguments
    } else {
        ErrorCategory::WrongApi
    }
}

fn extract_gold_curl(raw: &str) -> Option<CurlRequest> {
    crate::program::extract_curl_line(raw).and_then(|line| parse_curl(&line).ok())
}

pub fn execute_rest(
    curl_line: Option<String>,
    test: &TestCase,
    config: &RestConfig,
) -> EvalOutcome {
    let line = match curl_line {
        Some(l) => l,
        None => return EvalOutcome::non_executable(&test.id, "no curl line in completion"),
    };

    if test.compare_mode == CompareMode::Verbatim {
        let gold_line = test.gold_programs[0].raw_text.trim();
        let success = line == gold_line;
        return EvalOutcome {
            test_id: test.id.clone(),
            executable: true,
            success,
            metrics: Default::default(),
            category: categorize_rest(&line, test, success),
            detail: (!success).then(|| "generation differs from gold request".into()),
        };
    }

    let request = match parse_curl(&line) {
        Ok(r) => r,
        Err(err) => return EvalOutcome::non_executable(&test.id, err),
    };
    let response = match route_response(&request, config) {
        Some(r) => r,
        None => {
            return EvalOutcome::non_executable(
                &test.id,
                format!("no route for {} {}", request.method, request.url),
            )
        }
    };
    let success = test.oracle_response.as_deref() == Some(response);
    EvalOutcome {
        test_id: test.id.clone(),
        executable: true,
        success,
        metrics: Default::default(),
        category: categorize_rest(&line, test, success),
        detail: (!success).then(|| "routed response differs from oracle".into()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::program::ActionProgram;

    const WEATHER_URL: &str =
        "https://api.openweathermap.org/data/2.5/weather?q=paris&appid=test-key&units=metric";

    fn config() -> RestConfig {
        RestConfig {
            routes: vec![
                RouteEntry {
                    method: "GET".into(),
                    path: "/data/2.5/weather".into(),
                    query: vec![
                        ("q".into(), "paris".into()),
                        ("appid".into(), "test-key".into()),
                        ("units".into(), "metric".into()),
                    ],
                    body: None,
                    response: "{\"temp\": 21}".into(),
                },
                RouteEntry {
                    method: "POST".into(),
                    path: "/v1/favourites".into(),
                    query: vec![],
                    body: Some("{\"image_id\":\"MTUyNTA1OA\"}".into()),
                    response: "{\"id\": 1}".into(),
                },
            ],
        }
    }

    fn test_case(gold: &str, oracle: Option<&str>) -> TestCase {
        TestCase {
            id: "t0".into(),
            goal_text: "weather in paris".into(),
            gold_programs: vec![ActionProgram::from_raw(gold)],
            oracle_response: oracle.map(str::to_string),
            compare_mode: CompareMode::ExecuteAndCompare,
        }
    }

    #[test]
    fn parses_method_url_and_body() {
        let req = parse_curl(
            "curl -X POST 'https://api.thecatapi.com/v1/favourites' --data '{\"image_id\":\"MTUyNTA1OA\"}'",
        )
        .unwrap();
        assert_eq!(req.method, "POST");
        assert_eq!(req.url.path(), "/v1/favourites");
        assert_eq!(req.body.as_deref(), Some("{\"image_id\":\"MTUyNTA1OA\"}"));
    }

    #[test]
    fn data_flag_defaults_method_to_post() {
        let req = parse_curl("curl 'https://x.test/a' -d 'payload'").unwrap();
        assert_eq!(req.method, "POST");
    }

    #[test]
    fn headers_are_consumed() {
        let req =
            parse_curl("curl -H 'x-api-key: k' 'https://api.thecatapi.com/v1/favourites'").unwrap();
        assert_eq!(req.method, "GET");
        assert_eq!(req.url.path(), "/v1/favourites");
    }

    #[test]
    fn correct_query_routes_and_succeeds() {
        let gold = format!("curl -X GET '{WEATHER_URL}'");
        let outcome = execute_rest(
            Some(gold.clone()),
            &test_case(&gold, Some("{\"temp\": 21}")),
            &config(),
        );
        assert!(outcome.executable);
        assert!(outcome.success);
    }

    #[test]
    fn query_order_does_not_matter() {
        let reordered = "curl 'https://api.openweathermap.org/data/2.5/weather?units=metric&appid=test-key&q=paris'";
        let gold = format!("curl -X GET '{WEATHER_URL}'");
        let outcome = execute_rest(
            Some(reordered.into()),
            &test_case(&gold, Some("{\"temp\": 21}")),
            &config(),
        );
        assert!(outcome.success);
    }

    #[test]
    fn wrong_path_is_non_executable() {
        let line = "curl 'https://api.openweathermap.org/data/2.5/forecast?q=paris&appid=test-key&units=metric'";
        let gold = format!("curl -X GET '{WEATHER_URL}'");
        let outcome = execute_rest(
            Some(line.into()),
            &test_case(&gold, Some("{\"temp\": 21}")),
            &config(),
        );
        assert!(!outcome.executable);
        assert_eq!(outcome.category, ErrorCategory::NonExecutable);
    }

    #[test]
    fn missing_curl_line_is_non_executable() {
        let gold = format!("curl -X GET '{WEATHER_URL}'");
        let outcome = execute_rest(None, &test_case(&gold, None), &config());
        assert!(!outcome.executable);
    }

    #[test]
    fn verbatim_compare_is_exact() {
        let gold = "curl -X DELETE 'https://api.thecatapi.com/v1/favourites/232'";
        let mut test = test_case(gold, None);
        test.compare_mode = CompareMode::Verbatim;

        let exact = execute_rest(Some(gold.to_string()), &test, &config());
        assert!(exact.success);

        let off_by_one = "curl -X DELETE 'https://api.thecatapi.com/v1/favourites/233'";
        let near = execute_rest(Some(off_by_one.to_string()), &test, &config());
        assert!(near.executable);
        assert!(!near.success);
        assert_eq!(near.category, ErrorCategory::WrongArguments);
    }

    #[test]
    fn routed_failures_split_into_wrong_arguments_and_wrong_api() {
        // Distractor routes so wrong-but-valid requests still execute.
        let mut cfg = config();
        cfg.routes.push(RouteEntry {
            method: "GET".into(),
            path: "/data/2.5/weather".into(),
            query: vec![
                ("q".into(), "lyon".into()),
                ("appid".into(), "test-key".into()),
                ("units".into(), "metric".into()),
            ],
            body: None,
            response: "{\"temp\": 14}".into(),
        });
        cfg.routes.push(RouteEntry {
            method: "GET".into(),
            path: "/data/2.5/air_pollution".into(),
            query: vec![],
            body: None,
            response: "{}".into(),
        });
        let gold = format!("curl -X GET '{WEATHER_URL}'");
        let test = test_case(&gold, Some("{\"temp\": 21}"));

        // Same endpoint, wrong argument value: executable, wrong_arguments.
        let pred = "curl -X GET 'https://api.openweathermap.org/data/2.5/weather?q=lyon&appid=test-key&units=metric'";
        let outcome = execute_rest(Some(pred.into()), &test, &cfg);
        assert!(outcome.executable);
        assert_eq!(outcome.category, ErrorCategory::WrongArguments);

        // Different path: executable (routed), wrong_api.
        let other = "curl 'https://api.openweathermap.org/data/2.5/air_pollution'";
        let outcome = execute_rest(Some(other.into()), &test, &cfg);
        assert!(outcome.executable);
        assert_eq!(outcome.category, ErrorCategory::WrongApi);
    }
}
