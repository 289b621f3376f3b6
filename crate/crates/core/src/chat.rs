//! Team chat: rooms with densely sequenced, immutable messages.
//!
//! Sequence numbers are assigned inside the insert transaction, so posts to
//! one room are serialized and `seq` runs 1, 2, 3, … with no gaps. Live
//! subscribers are woken through a watch channel and then read from the
//! store, which makes delivery exactly-once and in order by construction.

use std::collections::VecDeque;
use std::sync::Arc;

use rusqlite::{params, OptionalExtension, Row};
use serde::{Deserialize, Serialize};
use tokio::sync::watch;

use crate::auth::Principal;
use crate::clock::now_ms;
use crate::db::Db;
use crate::error::{Error, Result};
use crate::ids::{RoomId, UserId};

pub const MAX_BODY_BYTES: usize = 8 * 1024;
pub const MAX_FETCH: u32 = 1000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Room {
    pub id: RoomId,
    pub name: String,
    pub created_by: UserId,
    pub created_at: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub room: RoomId,
    pub seq: u64,
    pub author: UserId,
    pub ts: i64,
    pub body: String,
}

impl Room {
    fn from_row(r: &Row<'_>) -> rusqlite::Result<Self> {
        Ok(Room { id: r.get("id")?, name: r.get("name")?, created_by: r.get("created_by")?, created_at: r.get("created_at")? })
    }
}

impl Message {
    fn from_row(r: &Row<'_>) -> rusqlite::Result<Self> {
        Ok(Message {
            room: r.get("room_id")?,
            seq: r.get::<_, i64>("seq")? as u64,
            author: r.get("author")?,
            ts: r.get("ts")?,
            body: r.get("body")?,
        })
    }
}

pub struct Chat {
    db: Arc<Db>,
    posted: watch::Sender<u64>,
}

impl Chat {
    pub fn new(db: Arc<Db>) -> Self {
        Chat { db, posted: watch::Sender::new(0) }
    }

    pub fn create_room(&self, actor: &Principal, name: &str) -> Result<Room> {
        let name = name.trim();
        if name.is_empty() {
            return Err(Error::EmptyName);
        }
        let now = now_ms();
        self.db.tx(|tx| {
            let taken = tx
                .query_row("SELECT 1 FROM rooms WHERE name_key = ?1", [name.to_lowercase()], |_| Ok(()))
                .optional()?
                .is_some();
            if taken {
                return Err(Error::DuplicateName(name.to_string()));
            }
            tx.execute(
                "INSERT INTO rooms(name, name_key, created_by, created_at) VALUES (?1, ?2, ?3, ?4)",
                params![name, name.to_lowercase(), actor.user_id, now],
            )?;
            Ok(Room { id: RoomId(tx.last_insert_rowid()), name: name.to_string(), created_by: actor.user_id, created_at: now })
        })
    }

    pub fn rooms(&self) -> Result<Vec<Room>> {
        self.db.read(|c| {
            let mut stmt = c.prepare("SELECT * FROM rooms ORDER BY id")?;
            let rows = stmt.query_map([], Room::from_row)?;
            Ok(rows.collect::<rusqlite::Result<_>>()?)
        })
    }

    pub fn room(&self, id: RoomId) -> Result<Room> {
        self.db
            .read(|c| Ok(c.query_row("SELECT * FROM rooms WHERE id = ?1", [id], Room::from_row).optional()?))?
            .ok_or(Error::NotFound("room"))
    }

    /// Append a message with the room's next sequence number. Server time
    /// never runs backwards within a room.
    pub fn post(&self, actor: &Principal, room: RoomId, body: &str) -> Result<Message> {
        if body.trim().is_empty() {
            return Err(Error::EmptyBody);
        }
        if body.len() > MAX_BODY_BYTES {
            return Err(Error::BodyTooLarge(MAX_BODY_BYTES));
        }
        let now = now_ms();
        let msg = self.db.tx(|tx| {
            tx.query_row("SELECT 1 FROM rooms WHERE id = ?1", [room], |_| Ok(())).optional()?.ok_or(Error::NotFound("room"))?;
            let (last_seq, last_ts): (i64, Option<i64>) = tx.query_row(
                "SELECT COALESCE(MAX(seq), 0), MAX(ts) FROM messages WHERE room_id = ?1",
                [room],
                |r| Ok((r.get(0)?, r.get(1)?)),
            )?;
            let msg = Message {
                room,
                seq: last_seq as u64 + 1,
                author: actor.user_id,
                ts: last_ts.map_or(now, |t| t.max(now)),
                body: body.to_string(),
            };
            tx.execute(
                "INSERT INTO messages(room_id, seq, author, ts, body) VALUES (?1, ?2, ?3, ?4, ?5)",
                params![room, msg.seq as i64, msg.author, msg.ts, msg.body],
            )?;
            Ok(msg)
        })?;
        self.posted.send_modify(|n| *n += 1);
        Ok(msg)
    }

    /// Messages with `seq > since_seq`, ascending, at most `limit`.
    pub fn fetch(&self, room: RoomId, since_seq: u64, limit: u32) -> Result<Vec<Message>> {
        if !(1..=MAX_FETCH).contains(&limit) {
            return Err(Error::InvalidLimit);
        }
        self.room(room)?;
        self.read_after(room, since_seq, limit)
    }

    fn read_after(&self, room: RoomId, since_seq: u64, limit: u32) -> Result<Vec<Message>> {
        self.db.read(|c| {
            let mut stmt = c.prepare(
                "SELECT * FROM messages WHERE room_id = ?1 AND seq > ?2 ORDER BY seq LIMIT ?3",
            )?;
            let rows = stmt.query_map(params![room, since_seq as i64, limit], Message::from_row)?;
            Ok(rows.collect::<rusqlite::Result<_>>()?)
        })
    }

    /// Every message with `seq >= from_seq`, then each new one as it is
    /// posted.
    pub fn subscribe(self: &Arc<Self>, room: RoomId, from_seq: u64) -> Result<Subscription> {
        self.room(room)?;
        Ok(Subscription {
            chat: Arc::clone(self),
            room,
            next_seq: from_seq.max(1),
            buffer: VecDeque::new(),
            wake: self.posted.subscribe(),
        })
    }
}

pub struct Subscription {
    chat: Arc<Chat>,
    room: RoomId,
    next_seq: u64,
    buffer: VecDeque<Message>,
    wake: watch::Receiver<u64>,
}

impl Subscription {
    /// The next message in sequence, waiting for one to be posted if needed.
    pub async fn next(&mut self) -> Result<Message> {
        loop {
            if let Some(m) = self.buffer.pop_front() {
                self.next_seq = m.seq + 1;
                return Ok(m);
            }
            // Mark the current version seen before reading so a post that
            // lands after the read still wakes us.
            self.wake.borrow_and_update();
            let batch = self.chat.read_after(self.room, self.next_seq - 1, MAX_FETCH)?;
            if batch.is_empty() {
                if self.wake.changed().await.is_err() {
                    return Err(Error::NotFound("room"));
                }
            } else {
                self.buffer.extend(batch);
            }
        }
    }

    pub fn room(&self) -> RoomId {
        self.room
    }
}
