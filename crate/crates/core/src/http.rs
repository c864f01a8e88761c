//! Blocking JSON-over-HTTP client shared by the remote providers.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;

pub const MAX_ATTEMPTS: u32 = 3;
pub const INITIAL_BACKOFF: Duration = Duration::from_millis(250);
pub const DEFAULT_IN_FLIGHT: usize = 4;

#[derive(Debug, thiserror::Error)]
pub enum HttpError {
    #[error("request to {endpoint} failed after {attempts} attempts: {message}")]
    Exhausted { endpoint: String, attempts: u32, message: String },
    #[error("could not build HTTP client: {0}")]
    Client(String),
}

#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { attempts: MAX_ATTEMPTS, initial_backoff: INITIAL_BACKOFF }
    }
}

#[derive(Debug, Clone)]
pub struct JsonClient {
    inner: reqwest::blocking::Client,
    endpoint: String,
    retry: RetryPolicy,
}

impl JsonClient {
    pub fn new(endpoint: &str, timeout_ms: u64) -> Result<Self, HttpError> {
        Self::with_retry(endpoint, timeout_ms, RetryPolicy::default())
    }

    pub fn with_retry(endpoint: &str, timeout_ms: u64, retry: RetryPolicy) -> Result<Self, HttpError> {
        let inner = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(timeout_ms.max(1)))
            .build()
            .map_err(|e| HttpError::Client(e.to_string()))?;
        Ok(Self { inner, endpoint: endpoint.to_string(), retry })
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    /// POST `body` and decode the response, retrying transport errors, non-2xx
    /// statuses and undecodable bodies with exponential backoff.
    pub fn post<B: Serialize, R: DeserializeOwned>(&self, body: &B) -> Result<R, HttpError> {
        let attempts = self.retry.attempts.max(1);
        let mut backoff = self.retry.initial_backoff;
        let mut last = String::new();
        for attempt in 1..=attempts {
            match self.try_once(body) {
                Ok(r) => return Ok(r),
                Err(message) => {
                    log::warn!("{} attempt {attempt}/{attempts}: {message}", self.endpoint);
                    last = message;
                }
            }
            if attempt < attempts {
                std::thread::sleep(backoff);
                backoff *= 2;
            }
        }
        Err(HttpError::Exhausted { endpoint: self.endpoint.clone(), attempts, message: last })
    }

    fn try_once<B: Serialize, R: DeserializeOwned>(&self, body: &B) -> Result<R, String> {
        let resp = self.inner.post(&self.endpoint).json(body).send().map_err(|e| e.to_string())?;
        let status = resp.status();
        if !status.is_success() {
            return Err(format!("HTTP {status}"));
        }
        resp.json::<R>().map_err(|e| format!("bad response body: {e}"))
    }
}

/// Map `f` over `items` with at most `in_flight` concurrent calls. Results come
/// back in input order regardless of completion order.
pub fn map_in_flight<T, R, F>(items: &[T], in_flight: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync,
{
    let workers = in_flight.max(1).min(items.len());
    if workers <= 1 {
        return items.iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(i, &items[i]);
                slots.lock().expect("result slots")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("result slots")
        .into_iter()
        .map(|r| r.expect("every slot filled"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_in_flight_preserves_order() {
        let items: Vec<u64> = (0..50).collect();
        let out = map_in_flight(&items, 4, |i, v| {
            std::thread::sleep(Duration::from_micros((50 - v) * 10));
            (i, v * 2)
        });
        for (i, (j, v)) in out.into_iter().enumerate() {
            assert_eq!(i, j);
            assert_eq!(v, i as u64 * 2);
        }
    }

    #[test]
    fn unreachable_endpoint_exhausts_retries() {
        let client = JsonClient::with_retry(
            "http://127.0.0.1:9/none",
            200,
            RetryPolicy { attempts: 2, initial_backoff: Duration::from_millis(1) },
        )
        .unwrap();
        let err = client.post::<_, serde_json::Value>(&serde_json::json!({})).unwrap_err();
        assert!(matches!(err, HttpError::Exhausted { attempts: 2, .. }));
    }
}
