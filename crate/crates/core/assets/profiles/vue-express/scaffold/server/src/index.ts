import express from 'express'
import cors from 'cors'
import { existsSync, readdirSync } from 'node:fs'
import { join } from 'node:path'

const app = express()
app.use(cors())
app.use(express.json())

app.get('/api/health', (_req, res) => {
  res.json({ ok: true })
})

const routesDir = join(__dirname, 'routes')
if (existsSync(routesDir)) {
  for (const file of readdirSync(routesDir).sort()) {
    if (file.endsWith('.ts') || file.endsWith('.js')) {
      // eslint-disable-next-line @typescript-eslint/no-var-requires
      app.use('/api', require(join(routesDir, file)).default)
    }
  }
}

const port = Number(process.env.PORT ?? 3000)
app.listen(port, '127.0.0.1', () => {
  console.log(`server listening on ${port}`)
})
