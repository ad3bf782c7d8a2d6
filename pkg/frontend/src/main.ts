import { Api } from './api.js';
import { OperatorConsole } from './console.js';

const root = document.getElementById('app');
if (root) {
  const api = new Api(window.location.origin);
  void new OperatorConsole(root, api).start();
}
