import { referenceModel } from './model.js';
import { serve } from './server.js';

serve(referenceModel());
