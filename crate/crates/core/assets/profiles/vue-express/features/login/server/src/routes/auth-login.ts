import { Router } from 'express'
import { createHash } from 'node:crypto'
import { get, run } from '../db'

const router = Router()

run(`CREATE TABLE IF NOT EXISTS tb_user (
  id INTEGER PRIMARY KEY AUTOINCREMENT,
  name TEXT NOT NULL,
  email TEXT NOT NULL UNIQUE,
  password_hash TEXT NOT NULL
)`)

router.post('/auth/login', async (req, res) => {
  const { email, password } = req.body ?? {}
  const hash = createHash('sha256').update(String(password ?? '')).digest('hex')
  const user = await get<{ id: number; name: string }>(
    'SELECT id, name FROM tb_user WHERE email = ? AND password_hash = ?',
    [email, hash],
  )
  if (!user) {
    res.status(401).json({ error: 'invalid credentials' })
    return
  }
  res.json(user)
})

export default router
