import { ApiClient } from './api.js';
import { init } from './app.js';

const root = document.getElementById('app');
if (root) {
  const controller = init(root, new ApiClient(''));
  void controller.refreshTheorems();
}
