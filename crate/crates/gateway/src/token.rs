//! Bearer session tokens: `annotator.issued.expires.mac`, where the mac is a
//! SHA-256 over the secret and the other three fields. Times are Unix seconds.

use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Session {
    pub annotator: String,
    pub issued_at: u64,
    pub expires_at: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum TokenError {
    #[error("malformed token")]
    Malformed,
    #[error("token signature mismatch")]
    BadSignature,
    #[error("token expired")]
    Expired,
}

#[derive(Clone)]
pub struct TokenIssuer {
    secret: String,
    ttl_secs: u64,
}

/// Annotator ids are restricted so they can be embedded in tokens and paths.
pub fn valid_annotator_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
}

pub fn now_secs() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl TokenIssuer {
    pub fn new(secret: impl Into<String>, ttl_secs: u64) -> Self {
        TokenIssuer {
            secret: secret.into(),
            ttl_secs,
        }
    }

    fn mac(&self, annotator: &str, issued: u64, expires: u64) -> String {
        let mut h = Sha256::new();
        h.update(self.secret.as_bytes());
        h.update([0]);
        h.update(format!("{annotator}.{issued}.{expires}").as_bytes());
        hex::encode(h.finalize())
    }

    pub fn issue_at(&self, annotator: &str, now: u64) -> (String, Session) {
        let expires = now.saturating_add(self.ttl_secs);
        let token = format!("{annotator}.{now}.{expires}.{}", self.mac(annotator, now, expires));
        let session = Session {
            annotator: annotator.to_string(),
            issued_at: now,
            expires_at: expires,
        };
        (token, session)
    }

    pub fn verify_at(&self, token: &str, now: u64) -> Result<Session, TokenError> {
        let parts: Vec<&str> = token.split('.').collect();
        let [annotator, issued, expires, mac] = parts[..] else {
            return Err(TokenError::Malformed);
        };
        if !valid_annotator_id(annotator) {
            return Err(TokenError::Malformed);
        }
        let issued: u64 = issued.parse().map_err(|_| TokenError::Malformed)?;
        let expires: u64 = expires.parse().map_err(|_| TokenError::Malformed)?;
        if !constant_time_eq(mac.as_bytes(), self.mac(annotator, issued, expires).as_bytes()) {
            return Err(TokenError::BadSignature);
        }
        if now >= expires {
            return Err(TokenError::Expired);
        }
        Ok(Session {
            annotator: annotator.to_string(),
            issued_at: issued,
            expires_at: expires,
        })
    }

    pub fn verify(&self, token: &str) -> Result<Session, TokenError> {
        self.verify_at(token, now_secs())
    }
}

pub fn constant_time_eq(a: &[u8], b: &[u8]) -> bool {
    a.len() == b.len() && a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}
