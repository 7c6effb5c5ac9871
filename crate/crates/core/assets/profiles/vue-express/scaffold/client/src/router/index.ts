import { createRouter, createWebHistory, type RouteRecordRaw } from 'vue-router'

const views = import.meta.glob('../views/*View.vue')

function viewName(file: string): string {
  return file.replace('../views/', '').replace('View.vue', '')
}

function toPath(name: string): string {
  if (name === 'Home') return '/'
  return '/' + name.replace(/([a-z0-9])([A-Z])/g, '$1-$2').toLowerCase()
}

const routes: RouteRecordRaw[] = Object.entries(views).map(([file, component]) => ({
  path: toPath(viewName(file)),
  name: viewName(file),
  component,
}))

export default createRouter({
  history: createWebHistory(),
  routes,
})
