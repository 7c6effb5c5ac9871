import { Router } from 'express'
import { createHash } from 'node:crypto'
import { run } from '../db'

const router = Router()

run(`CREATE TABLE IF NOT EXISTS tb_user (
  id INTEGER PRIMARY KEY AUTOINCREMENT,
  name TEXT NOT NULL,
  email TEXT NOT NULL UNIQUE,
  password_hash TEXT NOT NULL
)`)

router.post('/auth/register', async (req, res) => {
  const { name, email, password } = req.body ?? {}
  if (!name || !email || !password) {
    res.status(400).json({ error: 'name, email and password are required' })
    return
  }
  const hash = createHash('sha256').update(String(password)).digest('hex')
  try {
    const { lastID } = await run('INSERT INTO tb_user (name, email, password_hash) VALUES (?, ?, ?)', [name, email, hash])
    res.status(201).json({ id: lastID, name })
  } catch {
    res.status(409).json({ error: 'email already registered' })
  }
})

export default router
