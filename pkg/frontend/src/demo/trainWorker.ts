/**
 * Background training worker: keeps the page responsive while SGD runs.
 * Receives the model payload + stored samples, returns the trained payload.
 */

import { trainSgd } from "../model.js";
import { BrowserSample } from "../preprocess.js";
import { ParamsPayload, decodePayload, encodeLayers } from "../wire.js";

export interface TrainRequest {
  payload: ParamsPayload;
  samples: BrowserSample[];
  epochs: number;
  batchSize: number;
  lr: number;
}

export interface TrainResponse {
  payload: ParamsPayload;
  losses: number[];
}

self.onmessage = (event: MessageEvent<TrainRequest>) => {
  const { payload, samples, epochs, batchSize, lr } = event.data;
  const model = decodePayload(payload);
  const losses = trainSgd(model, samples, epochs, batchSize, lr);
  const response: TrainResponse = { payload: encodeLayers(model), losses };
  (self as unknown as Worker).postMessage(response);
};
